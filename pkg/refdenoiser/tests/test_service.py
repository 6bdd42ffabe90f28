import json

import numpy as np
import pytest

from refdenoiser.service import ServiceConfig, Target, parse_mixture

from conftest import decode


class TestTarget:
    def test_point_velocity_closed_form(self):
        t = Target.point(0.0)
        x = np.full((2, 2, 2, 1), 2.0)
        assert np.all(t.velocity(x, 1.0) == 2.0)
        assert np.all(t.velocity(x, 0.5) == 4.0)

    def test_mixture_symmetric_cancels(self):
        t = parse_mixture("-1.0|1.0")
        x = np.zeros((2, 2, 2, 1))
        assert np.allclose(t.velocity(x, 0.8), 0.0, atol=1e-12)

    def test_mixture_posterior_matches_direct(self):
        rng = np.random.default_rng(0)
        t = Target(((0.3, -0.4), (0.7, 0.9)))
        for _ in range(10):
            x = rng.normal(size=(2, 2, 2, 1))
            tt = rng.uniform(0.4, 1.0)
            dens = np.array(
                [
                    w * np.exp(-np.sum((x - (1 - tt) * mu) ** 2) / (2 * tt * tt))
                    for w, mu in t.components
                ]
            )
            dens /= dens.sum()
            mean = dens[0] * -0.4 + dens[1] * 0.9
            assert np.allclose(t.velocity(x, tt), (x - mean) / tt, atol=1e-10)

    def test_weights_validated(self):
        with pytest.raises(ValueError):
            Target(((0.5, 0.0), (0.6, 1.0)))
        with pytest.raises(ValueError):
            Target(())

    def test_explicit_weight_syntax(self):
        t = parse_mixture("0.25:-1,0.75:2")
        assert t.components == ((0.25, -1.0), (0.75, 2.0))


class TestConfig:
    def test_needs_a_condition(self):
        with pytest.raises(ValueError):
            ServiceConfig()

    def test_default_serves_everything(self):
        cfg = ServiceConfig(default=Target.point(1.0))
        assert cfg.lookup("anything").components == ((1.0, 1.0),)

    def test_unknown_condition_lists_known(self):
        cfg = ServiceConfig(targets={"a": Target.point(0.0)})
        with pytest.raises(KeyError, match="'a'"):
            cfg.lookup("b")


class TestHandshake:
    def test_capabilities(self, service):
        p = service("--point", "0.0", "--max-size", "32", "--channels", "4")
        caps = p.hello()
        assert caps["op"] == "capabilities"
        assert caps["version"] == 1
        assert caps["max_size"] == 32
        assert caps["channels"] == 4
        assert caps["pointwise"] is True
        assert caps["deterministic"] is True

    def test_wrong_version_rejected_but_alive(self, service):
        p = service("--point", "0.0")
        p.send({"op": "hello", "version": 99})
        err = p.recv()
        assert err["op"] == "error" and err["id"] == 0
        assert "version" in err["message"]
        # still serving: a proper handshake succeeds afterwards
        assert p.hello()["op"] == "capabilities"


class TestVelocityFrames:
    def test_point_target_example(self, service):
        p = service("--point", "0.0")
        p.hello()
        p.velocity(7, np.full((2, 2, 2, 1), 2.0), t=1.0)
        frame = p.recv()
        assert frame["op"] == "velocity_ok" and frame["id"] == 7
        assert np.all(decode(frame) == 2.0)

    def test_float64_math_rounded_to_float32(self, service):
        p = service("--point", "0.1")
        p.hello()
        p.velocity(1, np.full((1, 1, 1, 1), 0.7), t=0.3)
        out = decode(p.recv())[0]
        expected = (np.float64(np.float32(0.7)) - 0.1) / 0.3
        assert out == np.float32(expected)

    def test_malformed_frame_error_id_zero_and_alive(self, service):
        p = service("--point", "0.0")
        p.hello()
        p.send("this is not json {")
        err = p.recv()
        assert err["op"] == "error" and err["id"] == 0
        p.velocity(2, np.zeros((1, 1, 1, 1)), t=1.0)
        assert p.recv()["op"] == "velocity_ok"

    def test_unknown_condition_error_with_id(self, service, tmp_path):
        table = tmp_path / "targets.json"
        table.write_text(json.dumps({"known": 0.5}))
        p = service("--targets", str(table))
        p.hello()
        p.velocity(9, np.zeros((1, 1, 1, 1)), t=1.0, condition="mystery")
        err = p.recv()
        assert err["op"] == "error" and err["id"] == 9
        assert "mystery" in err["message"]
        p.velocity(10, np.full((1, 1, 1, 1), 0.5), t=0.5, condition="known")
        assert np.all(decode(p.recv()) == 0.0)

    def test_payload_size_mismatch(self, service):
        p = service("--point", "0.0")
        p.hello()
        p.velocity(3, np.zeros((2, 2, 2, 1)), t=1.0, size=4)
        err = p.recv()
        assert err["op"] == "error" and err["id"] == 3

    def test_nonpositive_t_rejected(self, service):
        p = service("--point", "0.0")
        p.hello()
        p.velocity(4, np.zeros((1, 1, 1, 1)), t=0.0)
        err = p.recv()
        assert err["op"] == "error" and "t=" in err["message"]

    def test_channel_limit_enforced(self, service):
        p = service("--point", "0.0", "--channels", "2")
        p.hello()
        p.velocity(5, np.zeros((1, 1, 1, 3)), t=1.0)
        err = p.recv()
        assert err["op"] == "error" and err["id"] == 5

    def test_targets_file_with_default(self, service, tmp_path):
        table = tmp_path / "targets.json"
        table.write_text(json.dumps({"a": -1.0, "*": [[0.5, -1.0], [0.5, 1.0]]}))
        p = service("--targets", str(table))
        p.hello()
        p.velocity(1, np.full((1, 1, 1, 1), 0.0), t=1.0, condition="a")
        assert np.all(decode(p.recv()) == 1.0)  # (0 - (-1)) / 1
        p.velocity(2, np.full((1, 1, 1, 1), 0.0), t=0.8, condition="other")
        assert np.allclose(decode(p.recv()), 0.0, atol=1e-6)  # symmetric mixture


class TestInterleaving:
    def test_one_response_per_id(self, service):
        p = service("--point", "0.0")
        p.hello()
        ids = list(range(1, 9))
        for rid in ids:
            p.velocity(rid, np.full((1, 1, 1, 1), float(rid)), t=1.0)
        seen = {}
        for _ in ids:
            frame = p.recv()
            assert frame["op"] == "velocity_ok"
            assert frame["id"] not in seen
            seen[frame["id"]] = decode(frame)[0]
        assert sorted(seen) == ids
        for rid in ids:
            assert seen[rid] == float(rid)
