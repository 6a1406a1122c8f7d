import numpy as np
import pytest

from fgrnn.data import (FrameSequence, SyntheticConfig, generate_synthetic,
                        load_frames, save_frames, split_train_test)
from fgrnn.errors import ContractViolation, ParseError


class TestGenerateSynthetic:
    def test_static_config(self):
        cfg = SyntheticConfig(n_nodes=16, n_frames=10, rotation_rate=0.0,
                              deformation_amplitude=0.0, noise_std=0.0)
        seq, _ = generate_synthetic(cfg)
        for t in range(10):
            assert np.array_equal(seq.frames[t], seq.frames[0])

    def test_rigid_rotation_preserves_distances(self):
        cfg = SyntheticConfig(n_nodes=16, n_frames=6, rotation_rate=0.3,
                              deformation_amplitude=0.0, noise_std=0.0)
        seq, _ = generate_synthetic(cfg)

        def pairwise(f):
            return np.linalg.norm(f[:, None, :] - f[None, :, :], axis=2)

        for t in range(6):
            assert np.allclose(pairwise(seq.frames[t]), pairwise(seq.frames[0]),
                               atol=1e-12)

    def test_deterministic(self):
        cfg = SyntheticConfig(n_nodes=32, n_frames=20, seed=7)
        seq1, g1 = generate_synthetic(cfg)
        seq2, g2 = generate_synthetic(cfg)
        assert np.array_equal(seq1.frames, seq2.frames)
        assert g1.edges == g2.edges

    def test_copy_baseline_positive(self):
        seq, _ = generate_synthetic(SyntheticConfig(n_nodes=64, n_frames=50))
        baseline = np.mean([np.sum((seq.frames[t + 1] - seq.frames[t]) ** 2)
                            for t in range(seq.n_frames - 1)])
        assert baseline > 0.0

    @pytest.mark.parametrize("shape", ["ring", "grid", "cylinder"])
    def test_shapes(self, shape):
        cfg = SyntheticConfig(n_nodes=30, n_frames=3, base_shape=shape)
        seq, g = generate_synthetic(cfg)
        assert seq.n_nodes == 30 and seq.n_features == 3
        assert g.n_nodes == 30

    def test_invalid_shape(self):
        with pytest.raises(ContractViolation):
            SyntheticConfig(base_shape="sphere")


class TestFrameIO:
    @pytest.mark.parametrize("seed", range(5))
    def test_round_trip(self, tmp_path, seed):
        rng = np.random.default_rng(seed)
        scale = 10.0 ** float(rng.integers(-8, 8))
        seq = FrameSequence(rng.standard_normal((4, 6, 3)) * scale)
        path = tmp_path / "frames.gfrm"
        save_frames(seq, path)
        loaded = load_frames(path)
        assert np.array_equal(loaded.frames, seq.frames)

    def test_comments_skipped(self, tmp_path):
        path = tmp_path / "f.gfrm"
        path.write_text("# a comment\ngfrm 1 2 1 1\n0.5\n# trailing\n1.5\n")
        seq = load_frames(path)
        assert np.array_equal(seq.frames, [[[0.5], [1.5]]])

    def test_wrong_frame_count(self, tmp_path):
        path = tmp_path / "f.gfrm"
        path.write_text("gfrm 1 2 1 3\n0\n1\n2\n3\n")
        with pytest.raises(ParseError, match="expected 6 data lines"):
            load_frames(path)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "f.gfrm"
        path.write_text("")
        with pytest.raises(ParseError, match="line 1"):
            load_frames(path)

    def test_bad_header(self, tmp_path):
        path = tmp_path / "f.gfrm"
        path.write_text("frames 2 1 1\n0\n")
        with pytest.raises(ParseError):
            load_frames(path)


class TestSplit:
    def test_paper_split(self):
        seq = FrameSequence(np.zeros((573, 2, 1)))
        train, test = split_train_test(seq, 0.8)
        assert train.n_frames == 458 and test.n_frames == 115

    def test_even_split(self):
        seq = FrameSequence(np.arange(10)[:, None, None] * 1.0)
        train, test = split_train_test(seq, 0.5)
        assert train.n_frames == 5 and test.n_frames == 5

    def test_minimal(self):
        seq = FrameSequence(np.zeros((2, 2, 1)))
        train, test = split_train_test(seq, 0.8)
        assert train.n_frames == 1 and test.n_frames == 1

    def test_partition_properties(self):
        seq = FrameSequence(np.arange(17)[:, None, None] * 1.0)
        train, test = split_train_test(seq, 0.6)
        rejoined = np.concatenate([train.frames, test.frames])
        assert np.array_equal(rejoined, seq.frames)

    def test_bad_ratio(self):
        seq = FrameSequence(np.zeros((10, 2, 1)))
        with pytest.raises(ContractViolation):
            split_train_test(seq, 1.0)

    def test_empty_partition(self):
        seq = FrameSequence(np.zeros((3, 2, 1)))
        with pytest.raises(ContractViolation):
            split_train_test(seq, 0.01)
