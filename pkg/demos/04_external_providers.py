"""Running the segmentation pipeline against an external provider
service over the wire protocol.

Starts the reference wire server in-process (the separately packaged
provider-bridge service speaks the identical protocol), points the
pipeline at its endpoint, and compares the result with the built-in
providers.

Run:  python3 demos/04_external_providers.py
"""

import numpy as np

from dexgrasp_lab.naa import compute_negative_affordance
from dexgrasp_lab.objects import make_knife
from dexgrasp_lab.providers import builtin_suite
from dexgrasp_lab.wire import WireClient, WireServer, external_suite, reference_handlers


def main():
    knife = make_knife()

    with WireServer(reference_handlers()) as server:
        print(f"wire service listening on {server.endpoint}")
        print(f"health: {WireClient(server.endpoint).health()}\n")

        remote = compute_negative_affordance(
            knife.cloud, "blade part", external_suite(server.endpoint))
        print(f"over the wire: {len(remote.indices)} negative points, "
              f"sample {len(remote.sampled)}")

    local = compute_negative_affordance(knife.cloud, "blade part",
                                        builtin_suite(knife))
    print(f"built-in:      {len(local.indices)} negative points, "
          f"sample {len(local.sampled)}")

    both = np.intersect1d(remote.indices, local.indices)
    print(f"agreement: {len(both)} points selected by both paths")
    print("(the reference wire backends rank masks with content-hash "
          "embeddings, so their selections differ from the built-in "
          "scripted similarities — the protocol, not the models, is the "
          "point of this demo)")


if __name__ == "__main__":
    main()
