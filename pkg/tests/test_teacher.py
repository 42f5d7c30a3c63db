"""Teacher model: cloze forward/backward, code averaging, warm-up training."""

import numpy as np
import pytest

from dkph.encoder import EncoderConfig, EncoderParams
from dkph.exceptions import TrainingError
from dkph.numerics import finite_diff_check
from dkph.teacher import (
    TeacherParams,
    draw_mask,
    masked_eval_loss,
    teacher_backward,
    teacher_forward,
    teacher_recon_loss,
    train_teacher,
    video_code_from_frames,
)
from test_encoder import oracle_forward

TOY = EncoderConfig(frame_count=4, input_dim=6, model_dim=8, ffn_dim=12)
BITS = 16


def toy_teacher(seed=0):
    return TeacherParams.init(TOY, np.random.default_rng(seed), code_bits=BITS)


class TestForward:
    def test_positive_hash_outputs_give_all_plus_one_codes(self):
        p = toy_teacher(1)
        p.w_hash[:] = 0.0
        p.b_hash[:] = 0.5
        fwd = teacher_forward(np.random.default_rng(2).normal(size=(4, 6)), p, mask={0})
        assert np.all(fwd.frame_codes == 1.0)

    def test_zero_decoder_reconstruction_is_zero_and_loss_is_mean_square(self):
        p = toy_teacher(3)
        p.w_dec[:] = 0.0
        p.b_dec[:] = 0.0
        x = np.random.default_rng(4).normal(size=(4, 6))
        mask = (1, 3)
        fwd = teacher_forward(x, p, mask=mask)
        assert np.array_equal(fwd.recon, np.zeros((4, 6)))
        expected = (x[list(mask)] ** 2).sum() / (6 * 2)
        assert teacher_recon_loss(x, fwd.recon, mask) == pytest.approx(expected, rel=1e-15)

    def test_matches_straight_line_oracle(self):
        p = toy_teacher(5)
        x = np.random.default_rng(6).normal(size=(4, 6))
        mask = (2,)
        fwd = teacher_forward(x, p, mask=mask)

        frames = oracle_forward(x, p.encoder, mask=mask, mask_embed=p.mask_embed)
        z = frames @ p.w_hash + p.b_hash
        codes = np.where(np.tanh(z) >= 0, 1.0, -1.0)
        recon = codes @ p.w_dec + p.b_dec
        np.testing.assert_array_equal(fwd.frame_codes, codes)
        np.testing.assert_allclose(fwd.recon, recon, atol=1e-12)

    def test_codes_always_exactly_pm_one(self):
        p = toy_teacher(7)
        rng = np.random.default_rng(8)
        for _ in range(50):
            fwd = teacher_forward(rng.normal(size=(4, 6)) * 10, p, mask={0})
            assert np.all(np.abs(fwd.frame_codes) == 1.0)

    def test_decoder_sees_codes_only(self):
        # scaling the hash layer perturbs activations but flips no signs,
        # so the reconstruction must be bit-identical
        p = toy_teacher(9)
        x = np.random.default_rng(10).normal(size=(4, 6))
        fwd_a = teacher_forward(x, p, mask={1})
        p.w_hash *= 2.0
        p.b_hash *= 2.0
        fwd_b = teacher_forward(x, p, mask={1})
        assert np.array_equal(fwd_a.frame_codes, fwd_b.frame_codes)
        assert np.array_equal(fwd_a.recon, fwd_b.recon)


class TestReconLoss:
    def test_perfect_reconstruction_is_zero(self):
        x = np.random.default_rng(0).normal(size=(4, 6))
        assert teacher_recon_loss(x, x.copy(), (0, 2)) == 0.0

    def test_constant_offset_gives_offset_squared(self):
        x = np.random.default_rng(1).normal(size=(4, 6))
        assert teacher_recon_loss(x, x + 1.0, (0,)) == pytest.approx(1.0, rel=1e-12)
        assert teacher_recon_loss(x, x - 0.5, (1, 2, 3)) == pytest.approx(0.25, rel=1e-12)

    def test_matches_scalar_summation_oracle(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(5, 3))
        recon = rng.normal(size=(5, 3))
        mask = (0, 4)
        total = 0.0
        for m in mask:
            for j in range(3):
                total += (x[m, j] - recon[m, j]) ** 2
        assert teacher_recon_loss(x, recon, mask) == pytest.approx(
            total / (3 * 2), rel=1e-14
        )

    def test_empty_mask_rejected(self):
        x = np.zeros((4, 6))
        with pytest.raises(ValueError):
            teacher_recon_loss(x, x, ())


class TestVideoCodeFromFrames:
    def test_identical_frames_are_idempotent(self):
        code = np.tile([1.0, -1.0, 1.0, -1.0], (5, 1))
        out, ties = video_code_from_frames(code)
        assert np.array_equal(out.bits, [1, -1, 1, -1])
        assert ties == 0

    def test_opposite_frames_tie_everywhere_and_resolve_to_plus_one(self):
        row = np.array([1.0, -1.0, 1.0, 1.0, -1.0, -1.0, 1.0, -1.0])
        out, ties = video_code_from_frames(np.stack([row, -row]))
        assert np.all(out.bits == 1)
        assert ties == 8

    def test_majority_wins(self):
        frames = np.array([[1.0], [1.0], [-1.0]])
        out, ties = video_code_from_frames(frames)
        assert out.bits[0] == 1 and ties == 0
        out, _ = video_code_from_frames(-frames)
        assert out.bits[0] == -1

    def test_never_emits_zero(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            frames = np.where(rng.random((4, 16)) > 0.5, 1.0, -1.0)
            out, _ = video_code_from_frames(frames)
            assert np.all(np.abs(out.bits) == 1)


class TestBackward:
    def test_full_gradient_check_relaxed_mode(self):
        p = toy_teacher(11)
        x = np.random.default_rng(12).normal(size=(4, 6))
        mask = (0, 3)

        def loss(_):
            fwd = teacher_forward(x, p, mask=mask, binarize="relaxed")
            return teacher_recon_loss(x, fwd.recon, mask)

        fwd = teacher_forward(x, p, mask=mask, binarize="relaxed")
        grads = teacher_backward(x, fwd, p)

        names = [f"encoder.{n}" for n in EncoderParams.TENSOR_FIELDS] + list(
            TeacherParams.EXTRA_FIELDS
        )
        pd, gd = p.as_dict(), grads.as_dict()
        report = finite_diff_check(
            loss, [pd[n] for n in names], [gd[n] for n in names], step=1e-5
        )
        assert report.max_rel_error < 1e-5, (report, names[report.worst_index[0]])


class TestTraining:
    def make_features(self, n=12, seed=0):
        rng = np.random.default_rng(seed)
        protos = rng.normal(size=(3, 4, 6))
        return protos[rng.integers(0, 3, n)] + 0.3 * rng.normal(size=(n, 4, 6))

    def test_zero_epochs_returns_initialized_params(self):
        feats = self.make_features()
        result = train_teacher(feats, TOY, epochs=0, code_bits=BITS, seed=42, batch_size=4)
        init_ss = np.random.SeedSequence(42).spawn(3)[0]
        fresh = TeacherParams.init(TOY, np.random.default_rng(init_ss), BITS)
        for name, arr in result.params.as_dict().items():
            np.testing.assert_array_equal(arr, fresh.as_dict()[name])
        assert result.eval_before == result.eval_after

    def test_training_is_deterministic_under_seed(self):
        feats = self.make_features()
        a = train_teacher(feats, TOY, epochs=3, code_bits=BITS, seed=7, batch_size=4)
        b = train_teacher(feats, TOY, epochs=3, code_bits=BITS, seed=7, batch_size=4)
        for name, arr in a.params.as_dict().items():
            np.testing.assert_array_equal(arr, b.params.as_dict()[name])
        assert a.epoch_losses == b.epoch_losses

    def test_loss_does_not_increase_over_training(self):
        feats = self.make_features(n=20, seed=1)
        result = train_teacher(feats, TOY, epochs=10, code_bits=BITS, seed=3, batch_size=5)
        assert result.eval_after <= result.eval_before

    def test_masked_loss_halves_on_toy_corpus(self):
        # 200 videos, 50 epochs, frames correlated within a class like real
        # video; measured ratio 0.176, threshold frozen at the stated 0.5
        rng = np.random.default_rng(11)
        base = rng.normal(size=(10, 1, 6))
        protos = base + 0.3 * rng.normal(size=(10, 4, 6))
        feats = protos[rng.integers(0, 10, 200)] + 0.2 * rng.normal(size=(200, 4, 6))
        result = train_teacher(feats, TOY, epochs=50, code_bits=BITS, seed=5, batch_size=8)
        assert result.eval_after <= 0.5 * result.eval_before, (
            result.eval_before, result.eval_after,
        )

    def test_nan_features_raise_training_error_with_epoch(self):
        # poison every frame so whichever frame is masked hits the NaN;
        # binarization alone would launder NaN activations into codes
        feats = self.make_features()
        feats[0, :, 0] = np.nan
        with pytest.raises(TrainingError) as exc:
            train_teacher(feats, TOY, epochs=2, code_bits=BITS, seed=0, batch_size=4)
        assert exc.value.epoch == 0

    def test_draw_mask_bounds(self):
        rng = np.random.default_rng(0)
        for m in (1, 4, 25):
            mask = draw_mask(rng, m, ratio=0.15)
            assert 1 <= len(mask) <= m
            assert all(0 <= i < m for i in mask)

    def test_eval_loss_uses_fixed_masks(self):
        feats = self.make_features()
        p = toy_teacher(0)
        masks = [(0,)] * len(feats)
        a = masked_eval_loss(feats, p, masks)
        b = masked_eval_loss(feats, p, masks)
        assert a == b
