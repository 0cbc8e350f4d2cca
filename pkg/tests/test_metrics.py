import json
import socket
import threading

import numpy as np
import pytest

from dexgrasp_lab.env import EpisodeTrace, TraceRecord
from dexgrasp_lab.geometry import PointCloud
from dexgrasp_lab.metrics import (
    CannedJudge,
    GraspOutcome,
    JudgeProtocolError,
    JudgeTransportError,
    MetricConfig,
    MetricError,
    RemoteJudge,
    affordance_score,
    build_report,
    judge_hls,
    success_rate,
    trace_hash,
)


def outcome(fingertips, negative=None, success=True, steps=50, name="obj"):
    neg = PointCloud(negative if negative is not None else np.zeros((0, 3)))
    return GraspOutcome(success, steps, np.asarray(fingertips), neg, name)


def spread_tips(base=10.0):
    return base + np.arange(15).reshape(5, 3)


class TestSuccessRate:
    def test_all_successful(self):
        assert success_rate([outcome(spread_tips()) for _ in range(4)]) == 1.0

    def test_three_of_four(self):
        outs = [outcome(spread_tips(), success=(i > 0)) for i in range(4)]
        assert success_rate(outs) == 0.75

    def test_matches_brute_force_recount(self):
        rng = np.random.default_rng(0)
        outs = [outcome(spread_tips(), success=bool(rng.random() < 0.5))
                for _ in range(1000)]
        count = 0
        for o in outs:
            if o.success:
                count += 1
        assert success_rate(outs) == count / 1000

    def test_permutation_invariant(self):
        rng = np.random.default_rng(1)
        outs = [outcome(spread_tips(), success=bool(rng.random() < 0.3))
                for _ in range(50)]
        perm = [outs[i] for i in rng.permutation(50)]
        assert success_rate(outs) == success_rate(perm)

    def test_empty_rejected(self):
        with pytest.raises(MetricError):
            success_rate([])


class TestAffordanceScore:
    def test_far_fingertips_score_zero(self):
        o = outcome(spread_tips(10.0), negative=np.zeros((20, 3)))
        assert affordance_score(o) == 0

    def test_two_violating_fingertips(self):
        tips = spread_tips(10.0)
        tips[0] = [0.01, 0.0, 0.0]
        tips[3] = [0.0, 0.01, 0.0]
        o = outcome(tips, negative=np.zeros((7, 3)))
        assert affordance_score(o) == 2

    def test_empty_negative_set_scores_zero(self):
        o = outcome(np.zeros((5, 3)))
        assert affordance_score(o) == 0

    def test_matches_exhaustive_distance_matrix_oracle(self):
        rng = np.random.default_rng(2)
        cfg = MetricConfig()
        for _ in range(1000):
            tips = rng.uniform(-0.1, 0.1, size=(5, 3))
            neg = rng.uniform(-0.1, 0.1, size=(100, 3))
            o = outcome(tips, negative=neg)
            want = 0
            for f in range(5):
                hit = False
                for p in range(100):
                    if np.linalg.norm(tips[f] - neg[p]) <= cfg.as_threshold:
                        hit = True
                want += int(hit)
            assert affordance_score(o, cfg) == want

    def test_monotone_as_fingertip_approaches(self):
        rng = np.random.default_rng(3)
        neg = rng.uniform(-0.05, 0.05, size=(30, 3))
        for _ in range(50):
            tips = rng.uniform(-0.3, 0.3, size=(5, 3))
            o = outcome(tips, negative=neg)
            base = affordance_score(o)
            f = int(rng.integers(5))
            target = neg[int(rng.integers(30))]
            closer = tips.copy()
            closer[f] = tips[f] + 0.9 * (target - tips[f])
            assert affordance_score(outcome(closer, negative=neg)) >= base

    def test_direction_flag(self):
        tips = spread_tips(10.0)
        tips[0] = [0.0, 0.0, 0.0]
        o = outcome(tips, negative=np.zeros((4, 3)))
        assert affordance_score(o, MetricConfig(as_lower_is_better=True)) == 1
        assert affordance_score(o, MetricConfig(as_lower_is_better=False)) == 4

    def test_outcome_validation(self):
        with pytest.raises(MetricError):
            outcome(np.zeros((4, 3)))
        with pytest.raises(MetricError):
            outcome(spread_tips(), steps=300)


def make_trace(seed=0, n=5):
    rng = np.random.default_rng(seed)
    trace = EpisodeTrace()
    for i in range(n):
        trace.records.append(TraceRecord(
            step=i,
            action=[round(float(v), 6) for v in rng.uniform(-1, 1, 3)],
            reward={"total": float(i)},
            object_pose=[0.0, 0.0, 0.1 + 0.01 * i, 1.0, 0.0, 0.0, 0.0],
            success=(i == n - 1),
        ))
    return trace


class TestJudge:
    def test_canned_replay(self):
        trace = make_trace()
        judge = CannedJudge({trace_hash(trace): 8})
        assert judge_hls(trace, judge) == 8

    def test_canned_fixture_file(self, tmp_path):
        trace = make_trace(1)
        path = tmp_path / "judge.json"
        path.write_text(json.dumps({trace_hash(trace): 5}))
        assert judge_hls(trace, CannedJudge.from_file(path)) == 5

    def test_out_of_range_score_rejected(self):
        trace = make_trace()
        judge = CannedJudge({trace_hash(trace): 11})
        with pytest.raises(JudgeProtocolError):
            judge_hls(trace, judge)

    def test_non_json_rejected(self):
        class Broken:
            def score(self, prompt, summary, key):
                return "not json at all"

        with pytest.raises(JudgeProtocolError):
            judge_hls(make_trace(), Broken())

    def test_non_integer_score_rejected(self):
        class Floaty:
            def score(self, prompt, summary, key):
                return json.dumps({"score": 7.5})

        with pytest.raises(JudgeProtocolError):
            judge_hls(make_trace(), Floaty())

    def test_empty_trace_rejected(self):
        with pytest.raises(MetricError):
            judge_hls(EpisodeTrace(), CannedJudge({}))

    def test_trace_hash_stable_and_distinguishing(self):
        assert trace_hash(make_trace(0)) == trace_hash(make_trace(0))
        assert trace_hash(make_trace(0)) != trace_hash(make_trace(1))

    def test_remote_judge_round_trip(self):
        received = {}

        def serve(sock):
            conn, _ = sock.accept()
            with conn:
                buf = b""
                while not buf.endswith(b"\n"):
                    buf += conn.recv(65536)
                received["request"] = json.loads(buf.decode())
                conn.sendall(b'{"score": 9}\n')

        sock = socket.socket()
        sock.bind(("127.0.0.1", 0))
        sock.listen(1)
        thread = threading.Thread(target=serve, args=(sock,), daemon=True)
        thread.start()
        port = sock.getsockname()[1]
        trace = make_trace(2)
        assert judge_hls(trace, RemoteJudge(f"127.0.0.1:{port}")) == 9
        thread.join()
        sock.close()
        assert "prompt" in received["request"]
        assert received["request"]["frames"]["steps"] == 5

    def test_remote_judge_transport_error(self):
        probe = socket.socket()
        probe.bind(("127.0.0.1", 0))
        port = probe.getsockname()[1]
        probe.close()
        with pytest.raises(JudgeTransportError):
            judge_hls(make_trace(), RemoteJudge(f"127.0.0.1:{port}", timeout=0.5))


class TestReport:
    def test_report_contents(self):
        rng = np.random.default_rng(4)
        neg = rng.uniform(-0.02, 0.02, size=(10, 3))
        outs = []
        for i in range(10):
            tips = spread_tips(10.0)
            if i % 2 == 0:
                tips[0] = neg[0]
            outs.append(outcome(tips, negative=neg, success=(i < 7),
                                name="knife" if i < 5 else "ball"))
        report = build_report(outs)
        assert report["episodes"] == 10
        assert report["success_rate"] == 0.7
        assert sum(report["affordance_score_histogram"]) == 10
        assert set(report["per_object"]) == {"knife", "ball"}
        # recomputation oracle
        assert report["affordance_score_mean"] == pytest.approx(
            np.mean([affordance_score(o) for o in outs]))
        assert "config_hash" in report

    def test_hls_block_optional(self):
        outs = [outcome(spread_tips())]
        assert "hls_mean" not in build_report(outs)
        withh = build_report(outs, hls_scores=[8, 6])
        assert withh["hls_mean"] == 7.0

    def test_empty_rejected(self):
        with pytest.raises(MetricError):
            build_report([])
