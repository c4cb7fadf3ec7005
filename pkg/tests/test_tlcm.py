"""Discrete latent-causal-model demo: identifiability and its failure modes."""

import numpy as np
import pytest

from wavlab.errors import ConfigError
from wavlab.tlcm import TlcmSpec, default_tlcm, tlcm_demo, tlcm_step


class TestDynamics:
    def test_actions_injective_on_s_blocks(self):
        spec = default_tlcm()
        for z0 in range(4):
            for z1 in range(2):
                outcomes = set()
                for a in range(4):
                    nxt = tlcm_step(spec, (z0, z1, 0, 0), a)
                    outcomes.add((nxt[0], nxt[1]))
                assert len(outcomes) == 4

    def test_s_blocks_insulated_from_scene(self):
        spec = default_tlcm()
        for a in range(4):
            for z2 in range(3):
                for z3 in range(3):
                    base = tlcm_step(spec, (1, 0, 0, 0), a)[:2]
                    assert tlcm_step(spec, (1, 0, z2, z3), a)[:2] == base

    def test_aliasing_collapses_two_actions_on_s(self):
        spec = default_tlcm(aliasing=True)
        z = (2, 1, 0, 0)
        a2 = tlcm_step(spec, z, 2)
        a3 = tlcm_step(spec, z, 3)
        assert a2[:2] == a3[:2]
        assert a2[2:] != a3[2:]  # still distinct actions overall

    def test_back_action_wires_scene_into_s(self):
        spec = default_tlcm(back_action=True)
        assert tlcm_step(spec, (0, 0, 2, 0), 3)[1] != tlcm_step(spec, (0, 0, 0, 0), 3)[1]

    def test_scene_supports_are_compositional(self):
        spec = default_tlcm()
        assert not set(spec.seen_scene) & set(spec.oos_scene)
        for axis in range(2):
            assert {v[axis] for v in spec.seen_scene} == {0, 1, 2}

    def test_overlapping_supports_rejected(self):
        with pytest.raises(ConfigError):
            TlcmSpec(seen_scene=((0, 0), (1, 1), (2, 2), (0, 1), (1, 2)),
                     oos_scene=((0, 0),))


class TestDemo:
    def test_clean_instance_gives_perfect_s_restricted_recovery(self):
        report = tlcm_demo(default_tlcm(), 600, np.random.default_rng(0), n_eval=800)
        assert report.s_restricted_oos_accuracy == 1.0
        assert report.dense_oos_accuracy < 1.0

    def test_dense_model_fails_on_compositional_oos(self):
        report = tlcm_demo(default_tlcm(), 600, np.random.default_rng(1), n_eval=800)
        # Every OOS key is unseen for the dense model, so it falls back to
        # the global majority and loses most of its accuracy.
        assert report.dense_oos_accuracy <= 0.5

    def test_aliasing_caps_accuracy_at_enumerated_optimum(self):
        report = tlcm_demo(default_tlcm(aliasing=True), 600, np.random.default_rng(2), n_eval=800)
        assert report.s_restricted_oos_accuracy <= report.best_achievable_s_accuracy + 1e-12
        assert report.best_achievable_s_accuracy < 1.0
        assert report.aliased_pair_accuracy is not None
        assert report.aliased_pair_accuracy <= 0.5 + 0.1

    def test_back_action_degrades_s_restricted_accuracy(self):
        clean = tlcm_demo(default_tlcm(), 600, np.random.default_rng(3), n_eval=800)
        broken = tlcm_demo(default_tlcm(back_action=True), 600, np.random.default_rng(3), n_eval=800)
        assert broken.s_restricted_oos_accuracy < clean.s_restricted_oos_accuracy

    def test_seed_size_validated(self):
        with pytest.raises(ConfigError):
            tlcm_demo(default_tlcm(), 0, np.random.default_rng(4))
