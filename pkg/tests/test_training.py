"""Training-stage mechanics on narrow networks: freezing soundness,
assembling exactness, determinism, schedules, and the update closed form."""

import numpy as np
import pytest

from facealign.data import normalize_pixels
from facealign.errors import ContractViolation, TrainingDiverged
from facealign.geometry import clusters_for_pattern, interocular_distance
from facealign.loss import WeightVector
from facealign.network import (build_network, forward_features,
                               freeze_shared, predict_shape)
from facealign.optim import sgd_step
from facealign.synth import synth_generate
from facealign.training import (StageConfig, assemble, desk_stage_configs,
                                multicenter_finetune, reference_stage_configs,
                                perturbation_study, pretrain_bm,
                                report_to_csv, run_full_pipeline,
                                validation_errors, weighting_finetune)

TRUNK = (4, 4, 6, 6, 8, 8, 8, 8)
D = 8


def tiny_cfg(iters=6, check=3, batch=4):
    return StageConfig(max_iterations=iters, initial_lr=0.002,
                       lr_decay_every=max(iters // 2, 1), batch_size=batch,
                       val_check_every=check, convergence_patience=50)


@pytest.fixture(scope="module")
def small_data():
    return (synth_generate(5, 12, seed=100),
            synth_generate(5, 6, seed=101, split="val"))


@pytest.fixture(scope="module")
def small_bm(small_data):
    train, val = small_data
    return pretrain_bm(train, val, tiny_cfg(), seed=0,
                       feature_channels=D, conv_channels=TRUNK)


class TestStageConfig:
    def test_reference_values(self):
        cfgs = reference_stage_configs()
        pre, fine = cfgs["pretrain"], cfgs["weighting"]
        assert (pre.max_iterations, pre.initial_lr) == (180000, 0.02)
        assert (fine.max_iterations, fine.initial_lr) == (60000, 0.001)
        for c in (pre, fine):
            assert c.batch_size == 64
            assert c.momentum == 0.9
            assert c.weight_decay == 0.0005
            assert c.lr_decay_factor == 0.3
            assert c.lr_decay_every == 30000

    def test_lr_schedule_steps(self):
        cfg = reference_stage_configs()["pretrain"]
        assert cfg.lr_at(0) == 0.02
        assert cfg.lr_at(29999) == 0.02
        assert cfg.lr_at(30000) == pytest.approx(0.006)
        assert cfg.lr_at(60000) == pytest.approx(0.0018)

    def test_invalid_fields(self):
        with pytest.raises(ContractViolation):
            StageConfig(max_iterations=0, initial_lr=0.01)
        with pytest.raises(ContractViolation):
            StageConfig(max_iterations=10, initial_lr=0.01,
                        lr_decay_factor=1.5)

    def test_desk_config_keeps_decay_and_sgd_constants(self):
        # lr magnitudes are rescaled for small batches (the full-scale
        # 0.02 diverges at batch 8); the rest of the recipe is kept
        cfgs = desk_stage_configs()
        for cfg in cfgs.values():
            assert cfg.lr_decay_factor == 0.3
            assert cfg.momentum == 0.9
            assert cfg.weight_decay == 0.0005
        assert cfgs["pretrain"].max_iterations <= 2000


class TestPretrain:
    def test_deterministic(self, small_data):
        train, val = small_data
        a = pretrain_bm(train, val, tiny_cfg(), seed=7,
                        feature_channels=D, conv_channels=TRUNK)
        b = pretrain_bm(train, val, tiny_cfg(), seed=7,
                        feature_channels=D, conv_channels=TRUNK)
        assert a.digest(include_stats=True) == b.digest(include_stats=True)

    def test_pattern_mismatch_rejected(self):
        train = synth_generate(5, 4, seed=1)
        val = synth_generate(29, 2, seed=2, split="val")
        with pytest.raises(ContractViolation):
            pretrain_bm(train, val, tiny_cfg(), seed=0,
                        feature_channels=D, conv_channels=TRUNK)

    def test_early_loss_collapse_on_small_set(self):
        # 32 samples, standard network: after 100 iterations the median
        # training loss over seeds sits well under 10% of the initial loss
        from facealign.data import normalize_pixels
        from facealign.network import forward_features, backward_features
        from facealign.training import _EpochSampler
        train = synth_generate(5, 32, seed=200)
        ratios = []
        for seed in range(3):
            _, params = build_network(5, seed)
            images = normalize_pixels(train.images()).astype(np.float32)
            gts = train.gt_coords().astype(np.float32)
            inv_d2 = np.array(
                [1.0 / interocular_distance(s.shape) ** 2
                 for s in train.samples], dtype=np.float32)
            w2 = np.repeat(np.ones(5, np.float32), 2)
            sampler = _EpochSampler(32, 8, np.random.default_rng(seed))
            first = None
            for it in range(100):
                idx = sampler.next()
                x, caches = forward_features(params, images[idx], "train",
                                             want_cache=True)
                head = params.head(0)
                residual = x @ head.value - gts[idx]
                loss = float(np.mean((residual ** 2 @ w2)
                                     * (0.5 * inv_d2[idx])))
                if first is None:
                    first = loss
                grad_preds = (w2 * residual) * (inv_d2[idx] / 8)[:, None]
                params.zero_grads()
                head.grad += x.T @ grad_preds
                backward_features(params, caches,
                                  grad_preds @ head.value.T)
                for blk in params.blocks.values():
                    sgd_step(blk, 0.001, 0.9, 0.0005)
            ratios.append(loss / first)
        assert np.median(ratios) < 0.10

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergent_lr_aborts(self, small_data):
        train, val = small_data
        cfg = StageConfig(max_iterations=300, initial_lr=2e7,
                          lr_decay_every=1000, batch_size=4,
                          val_check_every=300)
        with pytest.raises(TrainingDiverged):
            pretrain_bm(train, val, cfg, seed=0,
                        feature_channels=D, conv_channels=TRUNK)


class TestValidationErrors:
    def test_profile_matches_per_sample_mean(self, small_data, small_bm):
        _, val = small_data
        prof = validation_errors(small_bm, 0, val, "BM")
        assert prof.eps.shape == (5,)
        assert prof.source_model == "BM"
        assert np.all(prof.eps >= 0)

    def test_single_sample_profile(self, small_bm):
        from facealign.data import Dataset
        val1 = synth_generate(5, 1, seed=55, split="val")
        prof = validation_errors(small_bm, 0, val1)
        from facealign.evaluation import error_matrix, predict_dataset
        errs = error_matrix(predict_dataset(small_bm, val1), val1)
        np.testing.assert_allclose(prof.eps, errs[0], rtol=1e-12)

    def test_two_sample_mean(self):
        # profile is the arithmetic mean of per-sample landmark errors
        from facealign.evaluation import error_matrix
        ds = synth_generate(5, 2, seed=56)
        preds = ds.gt_coords().copy()
        d0 = interocular_distance(ds.samples[0].shape)
        d1 = interocular_distance(ds.samples[1].shape)
        preds[0, 0] += 0.1 * d0
        preds[1, 0] += 0.3 * d1
        errs = error_matrix(preds, ds)
        np.testing.assert_allclose(errs.mean(axis=0)[0], 0.2, rtol=1e-9)

    def test_empty_val_rejected(self, small_bm):
        from facealign.data import Dataset
        with pytest.raises(ContractViolation):
            validation_errors(small_bm, 0, Dataset(5, "val", []))


class TestWeightingFinetune:
    def test_six_conv_blocks_frozen_in_step2(self, small_data, small_bm):
        train, val = small_data
        # patience 1 with tiny run: capture digests via a spy on stage 2
        wm, eps_b = weighting_finetune(small_bm, train, val, tiny_cfg(),
                                       seed=3)
        assert eps_b.source_model == "BM"
        assert wm.digest() != small_bm.digest()
        # weights used derive from eps_b: recompute and compare
        from facealign.loss import weights_from_errors
        u = weights_from_errors(eps_b)
        assert u.u.sum() == pytest.approx(5.0, rel=1e-9)

    def test_step2_freeze_soundness(self, small_data, small_bm):
        # run only stage 2 by hand and hash the frozen set
        from facealign.network import freeze_first_six_conv
        from facealign.training import _conv_train
        train, val = small_data
        work = small_bm.clone()
        mask = freeze_first_six_conv(work)
        before = work.digest(mask)
        out = _conv_train(work, 0, train, val, WeightVector.uniform(5),
                          tiny_cfg(), seed=4, stage="test")
        assert out.digest(mask) == before
        trained = [n for n in out.blocks
                   if n not in mask and
                   not np.array_equal(out.blocks[n].value,
                                      small_bm.blocks[n].value)]
        assert trained, "unfrozen blocks should have moved"

    def test_perturbation_zero_delta_reproduces(self, small_data, small_bm):
        train, val = small_data
        plain, _ = weighting_finetune(small_bm, train, val, tiny_cfg(),
                                      seed=5)
        pert, _ = weighting_finetune(small_bm, train, val, tiny_cfg(),
                                     seed=5, weight_perturbation=(0.0, 5))
        assert plain.digest(include_stats=True) == \
            pert.digest(include_stats=True)


class TestMulticenterFinetune:
    def test_shared_layers_bit_identical(self, small_data, small_bm):
        train, val = small_data
        shared_before = small_bm.digest(small_bm.shared_names(),
                                        include_stats=True)
        w1 = multicenter_finetune(small_bm, 1, train, val, tiny_cfg(),
                                  seed=6)
        assert small_bm.digest(small_bm.shared_names(),
                               include_stats=True) == shared_before
        assert w1.shape == (D + 1, 10)

    def test_head_moves_from_wm(self, small_data, small_bm):
        train, val = small_data
        w1 = multicenter_finetune(small_bm, 0, train, val, tiny_cfg(),
                                  seed=7)
        assert not np.array_equal(w1, small_bm.head(0).value)

    def test_weight_ratio_alpha(self, small_data, small_bm):
        # the weight vector used has group ratio alpha (125 by default)
        from facealign.loss import multicenter_weights
        train, val = small_data
        part = clusters_for_pattern(5)
        prof = validation_errors(small_bm, 0, val, "WM")
        u = multicenter_weights(1, prof, part)
        p = part.clusters[1]
        q = part.complements[1]
        # uniform-within-group case does not hold here, compare masses
        mass_p = u.u[p].sum() / len(p)
        mass_q = u.u[q].sum() / len(q)
        assert mass_p / mass_q == pytest.approx(125.0, rel=1e-9)


class TestAssemble:
    def test_single_head_identity(self):
        part = clusters_for_pattern(5)
        rng = np.random.default_rng(8)
        heads = [rng.standard_normal((D + 1, 10)).astype(np.float32)
                 for _ in range(part.m)]
        same = assemble([heads[0]] * part.m, part)
        np.testing.assert_array_equal(same, heads[0])

    def test_column_copy_exactness(self):
        part = clusters_for_pattern(5)
        rng = np.random.default_rng(9)
        heads = [rng.standard_normal((D + 1, 10)).astype(np.float32)
                 for _ in range(part.m)]
        out = assemble(heads, part)
        for head, idx in zip(heads, part.clusters):
            for j in idx:
                np.testing.assert_array_equal(out[:, 2 * j], head[:, 2 * j])
                np.testing.assert_array_equal(out[:, 2 * j + 1],
                                              head[:, 2 * j + 1])

    def test_per_landmark_prediction_bit_identical(self):
        part = clusters_for_pattern(5)
        rng = np.random.default_rng(10)
        heads = [rng.standard_normal((D + 1, 10)) for _ in range(part.m)]
        out = assemble(heads, part)
        for _ in range(20):
            x = np.concatenate([[1.0], rng.standard_normal(D)])
            assembled = x @ out
            for head, idx in zip(heads, part.clusters):
                own = x @ head
                for j in idx:
                    assert assembled[2 * j] == own[2 * j]
                    assert assembled[2 * j + 1] == own[2 * j + 1]

    def test_head_count_mismatch(self):
        part = clusters_for_pattern(5)
        with pytest.raises(ContractViolation):
            assemble([np.zeros((D + 1, 10))] * 2, part)


class TestSgdClosedForm:
    def test_one_step_matches_update_formula(self):
        # momentum 0, decay 0, batch of one: column k moves by
        # -lr * u_j (pred_k - gt_k) x / d^2, to machine precision
        _, params = build_network(5, 0, dtype=np.float64,
                                  feature_channels=D, conv_channels=TRUNK)
        freeze_shared(params, 0)
        rng = np.random.default_rng(11)
        ds = synth_generate(5, 1, seed=57)
        img = normalize_pixels(ds.samples[0].image.astype(np.float64))
        gt = ds.samples[0].shape
        d = interocular_distance(gt)
        u = WeightVector(rng.uniform(0.2, 2.0, 5))
        x, _ = forward_features(params, img[None], "infer")
        head = params.head(0)
        w_before = head.value.copy()
        pred = (x @ head.value)[0]
        lr = 0.05
        grad_preds = (np.repeat(u.u, 2) * (pred - gt.coords)) / d**2
        head.grad[...] = x.T @ grad_preds[None]
        sgd_step(head, lr, momentum=0.0, weight_decay=0.0)
        expected = w_before - lr * np.outer(x[0], grad_preds)
        np.testing.assert_allclose(head.value, expected, rtol=1e-15, atol=0)


@pytest.fixture(scope="module")
def pipeline_result(small_data):
    train, val = small_data
    cfgs = {"pretrain": tiny_cfg(8), "weighting": tiny_cfg(4),
            "multicenter": tiny_cfg(6)}
    return run_full_pipeline(train, val, cfgs, seed=1,
                             feature_channels=D, conv_channels=TRUNK)


class TestFullPipeline:
    def test_report_rows(self, pipeline_result):
        _, rows = pipeline_result
        assert [r["model"] for r in rows] == ["BM", "WM", "AM"]
        text = report_to_csv(rows)
        assert text.splitlines()[0] == "model,dataset,mean_error,failure_rate"
        assert len(text.splitlines()) == 4

    def test_am_shares_wm_shared_layers(self, pipeline_result):
        models, _ = pipeline_result
        assert models.am.digest(models.am.shared_names(),
                                include_stats=True) == \
            models.wm.digest(models.wm.shared_names(), include_stats=True)

    def test_heads_count_matches_partition(self, pipeline_result):
        models, _ = pipeline_result
        assert len(models.heads) == models.partition.m

    def test_am_head_is_assembled(self, pipeline_result):
        models, _ = pipeline_result
        np.testing.assert_array_equal(
            models.am.head(0).value,
            assemble(models.heads, models.partition))

    def test_deterministic_reports(self, small_data, pipeline_result):
        train, val = small_data
        cfgs = {"pretrain": tiny_cfg(8), "weighting": tiny_cfg(4),
                "multicenter": tiny_cfg(6)}
        _, rows2 = run_full_pipeline(train, val, cfgs, seed=1,
                                     feature_channels=D, conv_channels=TRUNK)
        assert rows2 == pipeline_result[1]

    def test_test_dataset_adds_three_rows(self, small_data):
        train, val = small_data
        test = synth_generate(5, 4, seed=102, split="test")
        cfgs = {"pretrain": tiny_cfg(4), "weighting": tiny_cfg(2),
                "multicenter": tiny_cfg(2)}
        _, rows = run_full_pipeline(train, val, cfgs, seed=2, test=test,
                                    feature_channels=D, conv_channels=TRUNK)
        assert [r["model"] for r in rows] == ["BM", "WM", "AM"] * 2
        assert len({r["dataset"] for r in rows}) == 2


class TestPerturbationStudy:
    def test_grid_and_csv(self, small_data, small_bm):
        from facealign.training import perturbation_to_csv
        train, val = small_data
        rows = perturbation_study(small_bm, train, val,
                                  deltas=[0.0, 0.2], seeds=[1, 2],
                                  cfg=tiny_cfg(3, check=3))
        assert len(rows) == 4
        assert all(np.isfinite(r["mean_error"]) for r in rows)
        text = perturbation_to_csv(rows)
        assert text.splitlines()[0] == "delta,seed,mean_error"
        assert len(text.splitlines()) == 5

    def test_invalid_delta(self, small_data, small_bm):
        train, val = small_data
        with pytest.raises(ContractViolation):
            perturbation_study(small_bm, train, val, deltas=[-0.1],
                               seeds=[1], cfg=tiny_cfg(2))
