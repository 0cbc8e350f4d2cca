"""The negative-affordance pipeline on the bundled knife.

Renders the knife cloud from six directions, prompts the built-in
segmenter on a 16x16 pixel grid, de-duplicates proposals with bbox NMS,
picks the mask most similar to the "blade part" query per view, and
back-projects the winners into 3D — the do-not-touch region. Saves the
six renders (blade pixels brightened) next to this script.

Run:  python3 demos/02_negative_affordance.py
"""

from pathlib import Path

import numpy as np
from PIL import Image

from dexgrasp_lab.naa import compute_negative_affordance, render_views
from dexgrasp_lab.objects import make_knife
from dexgrasp_lab.providers import builtin_suite


def main():
    knife = make_knife()
    na = compute_negative_affordance(knife.cloud, "auto", builtin_suite(knife))

    blade = knife.part_label("blade")
    frac = np.mean(knife.cloud.labels[na.indices] == blade)
    print(f"query resolved by the describer: {na.query!r}")
    print(f"negative region: {len(na.indices)} points, "
          f"{frac:.1%} carry the blade label")
    print(f"farthest-point sample for the reward: {len(na.sampled)} points")
    print(f"views contributing masks: {na.source_views}")

    out_dir = Path(__file__).parent
    negative = set(int(i) for i in na.indices)
    for view in render_views(knife.cloud, splat_radius=3):
        img = (view.image * 180).astype(np.uint8)
        hit = np.isin(view.pixel_index_map, list(negative))
        img[hit] = 255
        path = out_dir / f"knife_{view.view_id.replace('+', 'p').replace('-', 'm')}.png"
        Image.fromarray(img, mode="L").save(path)
        print(f"wrote {path.name}")


if __name__ == "__main__":
    main()
