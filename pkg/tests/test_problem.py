"""Learning task: losses, gradients, curvature, radius, datasets, IDX parsing."""

import struct

import numpy as np
import pytest

from ncota_sim.problem import (
    MU,
    SMOOTHNESS,
    ProblemSpec,
    estimate_radius,
    ingest_dataset,
    read_idx_images,
    read_idx_labels,
    solve_centralized,
    synthesize_dataset,
)


def test_loss_and_grad_at_zero(small_problem):
    # at w = 0 every logistic term is ln 2 and the gradient is -l d / 2
    w = np.zeros(small_problem.d)
    for i in range(small_problem.n):
        assert small_problem.local_loss(w, i) == pytest.approx(np.log(2.0), rel=1e-15)
        expected = -0.5 * small_problem.labels[i] * small_problem.features[i]
        assert np.allclose(small_problem.local_grad(w, i), expected, rtol=1e-15)
    assert small_problem.global_loss(w) == pytest.approx(np.log(2.0), rel=1e-15)


def test_local_grad_finite_differences(small_problem):
    rng = np.random.default_rng(40)
    h = 1e-6
    for _ in range(20):
        w = rng.standard_normal(small_problem.d)
        i = int(rng.integers(small_problem.n))
        g = small_problem.local_grad(w, i)
        fd = np.empty_like(g)
        for k in range(small_problem.d):
            e = np.zeros(small_problem.d)
            e[k] = h
            fd[k] = (small_problem.local_loss(w + e, i) - small_problem.local_loss(w - e, i)) / (2 * h)
        assert np.linalg.norm(fd - g) <= 1e-5 * max(np.linalg.norm(g), 1.0)


def test_global_grad_is_mean_of_locals(small_problem):
    rng = np.random.default_rng(41)
    w = rng.standard_normal(small_problem.d) * 0.5
    locals_mean = np.mean(
        [small_problem.local_grad(w, i) for i in range(small_problem.n)], axis=0
    )
    assert np.allclose(small_problem.global_grad(w), locals_mean, rtol=1e-12)


def test_grad_matrix_matches_local(small_problem):
    rng = np.random.default_rng(42)
    iterates = rng.standard_normal((small_problem.n, small_problem.d))
    g = small_problem.grad_matrix(iterates)
    for i in range(small_problem.n):
        assert np.allclose(g[i], small_problem.local_grad(iterates[i], i), rtol=1e-14)


def test_curvature_within_declared_bounds(small_problem):
    # numerical Hessian of each local loss has eigenvalues in [mu, mu + 1/4]
    rng = np.random.default_rng(43)
    h = 1e-5
    d = small_problem.d
    for trial in range(5):
        w = rng.standard_normal(d)
        i = int(rng.integers(small_problem.n))
        hess = np.empty((d, d))
        for k in range(d):
            e = np.zeros(d)
            e[k] = h
            hess[k] = (
                small_problem.local_grad(w + e, i) - small_problem.local_grad(w - e, i)
            ) / (2 * h)
        hess = 0.5 * (hess + hess.T)
        eigs = np.linalg.eigvalsh(hess)
        assert eigs.min() >= MU - 1e-6
        assert eigs.max() <= SMOOTHNESS + 1e-6
    assert SMOOTHNESS == pytest.approx(0.26)


def test_estimate_radius_single_node():
    # one node, unit feature: ||grad F(0)|| = 1/2, so R = 0.5/mu = 50
    spec = ProblemSpec(
        features=np.array([[1.0, 0.0]]), labels=np.array([1.0]), radius=1.0
    )
    assert estimate_radius(spec) == pytest.approx(50.0, rel=1e-15)


def test_estimate_radius_floor():
    # opposing labels on the same feature cancel grad F(0); the floor kicks in
    spec = ProblemSpec(
        features=np.array([[1.0, 0.0], [1.0, 0.0]]),
        labels=np.array([1.0, -1.0]),
        radius=1.0,
    )
    assert estimate_radius(spec, r_min=2.5) == 2.5


def test_synthetic_dataset_shape_and_invariants(small_problem):
    assert small_problem.n == 5
    assert small_problem.d == 4
    assert np.allclose(np.linalg.norm(small_problem.features, axis=1), 1.0, rtol=1e-12)
    assert sorted(np.unique(small_problem.labels)) == [-1.0, 1.0]
    assert (small_problem.labels > 0).sum() == 3  # balanced, odd count rounds up
    assert small_problem.test_features.shape == (200, 4)
    assert np.allclose(np.linalg.norm(small_problem.test_features, axis=1), 1.0)
    # frozen derived values for (n=5, d=4, seed=2)
    assert small_problem.radius == pytest.approx(34.896883187158934, rel=1e-14)


def test_synthetic_dataset_deterministic():
    a = synthesize_dataset(6, 3, seed=9)
    b = synthesize_dataset(6, 3, seed=9)
    assert np.array_equal(a.features, b.features)
    assert np.array_equal(a.labels, b.labels)
    c = synthesize_dataset(6, 3, seed=10)
    assert not np.array_equal(a.features, c.features)


def test_synthetic_radius_override():
    spec = synthesize_dataset(4, 3, seed=1, radius=7.0)
    assert spec.radius == 7.0
    no_test = synthesize_dataset(4, 3, seed=1, test_size=0)
    assert no_test.test_features is None
    assert np.isnan(no_test.classification_error(np.ones(3)))


def test_solve_centralized_logistic(small_problem):
    opt = solve_centralized(small_problem, tol=1e-10)
    assert np.linalg.norm(small_problem.global_grad(opt.w_star)) <= 1e-10
    assert np.linalg.norm(opt.w_star) <= small_problem.radius
    assert opt.zeta == pytest.approx(
        small_problem.radius - np.linalg.norm(opt.w_star), rel=1e-12
    )
    assert opt.nabla_max == pytest.approx(
        max(
            np.linalg.norm(small_problem.local_grad(opt.w_star, i))
            for i in range(small_problem.n)
        ),
        rel=1e-12,
    )
    # frozen values for the seed-2 small task
    assert opt.grad_norm_at_zero == pytest.approx(0.34896883187158934, rel=1e-12)
    assert opt.zeta == pytest.approx(30.874496660699357, rel=1e-9)
    assert opt.nabla_max == pytest.approx(0.062121263057770645, rel=1e-9)


def test_solve_centralized_quadratic(quad_problem):
    # on the separable quadratic the optimum is the centroid mean
    opt = solve_centralized(quad_problem, tol=1e-12)
    assert np.allclose(opt.w_star, quad_problem.centers.mean(axis=0), atol=1e-10)


def test_solve_centralized_rejects_bad_tol(small_problem):
    with pytest.raises(ValueError):
        solve_centralized(small_problem, tol=0.0)


def test_classification_error_prefers_good_separator():
    spec = synthesize_dataset(40, 6, seed=3)
    opt = solve_centralized(spec, tol=1e-8)
    trained = spec.classification_error(opt.w_star)
    random_err = spec.classification_error(np.ones(6))
    assert 0.0 <= trained <= 0.5
    assert trained <= random_err + 1e-12


def test_problem_json_round_trip(small_problem):
    back = ProblemSpec.from_json(small_problem.to_json())
    assert np.allclose(back.features, small_problem.features, rtol=1e-15)
    assert np.array_equal(back.labels, small_problem.labels)
    assert back.radius == small_problem.radius
    assert np.allclose(back.test_features, small_problem.test_features, rtol=1e-15)
    assert np.array_equal(back.test_labels, small_problem.test_labels)


def _write_idx_pair(tmp_path, images, digits):
    count, rows, cols = images.shape
    img_path = tmp_path / "images.idx3-ubyte"
    lbl_path = tmp_path / "labels.idx1-ubyte"
    with open(img_path, "wb") as fh:
        fh.write(struct.pack(">IIII", 0x00000803, count, rows, cols))
        fh.write(images.astype(np.uint8).tobytes())
    with open(lbl_path, "wb") as fh:
        fh.write(struct.pack(">II", 0x00000801, count))
        fh.write(np.asarray(digits, dtype=np.uint8).tobytes())
    return img_path, lbl_path


def test_read_idx_round_trip(tmp_path):
    rng = np.random.default_rng(50)
    images = rng.integers(0, 256, size=(7, 3, 2), dtype=np.uint8)
    digits = rng.integers(0, 10, size=7)
    img_path, lbl_path = _write_idx_pair(tmp_path, images, digits)
    got_images = read_idx_images(img_path)
    got_labels = read_idx_labels(lbl_path)
    assert got_images.shape == (7, 6)
    assert np.allclose(got_images, images.reshape(7, 6) / 255.0, rtol=1e-15)
    assert np.array_equal(got_labels, digits)


def test_read_idx_rejects_bad_magic_and_truncation(tmp_path):
    bad_magic = tmp_path / "bad.idx"
    with open(bad_magic, "wb") as fh:
        fh.write(struct.pack(">IIII", 0xDEADBEEF, 1, 2, 2))
        fh.write(bytes(4))
    with pytest.raises(ValueError, match="magic"):
        read_idx_images(bad_magic)

    short = tmp_path / "short.idx"
    with open(short, "wb") as fh:
        fh.write(struct.pack(">IIII", 0x00000803, 2, 2, 2))
        fh.write(bytes(5))  # needs 8
    with pytest.raises(ValueError, match="pixels"):
        read_idx_images(short)

    header_only = tmp_path / "header.idx"
    with open(header_only, "wb") as fh:
        fh.write(bytes(3))
    with pytest.raises(ValueError, match="truncated"):
        read_idx_images(header_only)
    with pytest.raises(ValueError, match="truncated"):
        read_idx_labels(header_only)

    wrong_label_magic = tmp_path / "wrong_labels.idx"
    with open(wrong_label_magic, "wb") as fh:
        fh.write(struct.pack(">II", 0x00000803, 1))
        fh.write(bytes(1))
    with pytest.raises(ValueError, match="magic"):
        read_idx_labels(wrong_label_magic)


def test_ingest_dataset_selection_and_labels(tmp_path):
    # 4x(2x2) images: two digit-0 (bright first pixel), two digit-1
    # (bright last pixel), plus a digit-7 that must be ignored
    images = np.zeros((5, 2, 2), dtype=np.uint8)
    images[0, 0, 0] = 200  # digit 0
    images[1, 0, 0] = 150  # digit 0
    images[2, 1, 1] = 210  # digit 1
    images[3, 1, 1] = 160  # digit 1
    images[4] = 255        # digit 7, all bright, would dominate selection
    digits = [0, 0, 1, 1, 7]
    img_path, lbl_path = _write_idx_pair(tmp_path, images, digits)

    spec = ingest_dataset(img_path, lbl_path, n=2, d=2, test_size=2)
    assert spec.n == 2 and spec.d == 2
    # training rows: first digit-0 image then first digit-1 image
    assert np.array_equal(spec.labels, [1.0, -1.0])
    # pixels 0 and 3 carry all training energy; features are one-hot
    assert np.allclose(spec.features, [[1.0, 0.0], [0.0, 1.0]])
    assert np.allclose(spec.test_features, [[1.0, 0.0], [0.0, 1.0]])
    assert np.array_equal(spec.test_labels, [1.0, -1.0])


def test_ingest_dataset_errors(tmp_path):
    images = np.zeros((2, 2, 2), dtype=np.uint8)
    images[:, 0, 0] = 9
    img_path, lbl_path = _write_idx_pair(tmp_path, images, [0, 1])
    with pytest.raises(ValueError, match="not enough"):
        ingest_dataset(img_path, lbl_path, n=4, d=2, test_size=0)

    # mismatched counts between the two files
    sub = tmp_path / "b"
    sub.mkdir()
    img2, _ = _write_idx_pair(sub, np.zeros((3, 2, 2), dtype=np.uint8), [0, 1, 0])
    with pytest.raises(ValueError, match="counts differ"):
        ingest_dataset(img2, lbl_path, n=2, d=2, test_size=0)
