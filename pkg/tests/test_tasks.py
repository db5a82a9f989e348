"""Task generator tests: spec'd dependency structures, bit-exact copy
semantics, seeded purity, and distributional checks."""

import struct

import numpy as np
import pytest
from scipy import stats

from gtmlab import tasks as T
from gtmlab.tasks import TaskConfig, TaskError

DIMS = (1, 8, 8)


@pytest.fixture(scope="module")
def digits():
    return T.synth_glyphs(n_classes=10, per_class=30, dims=DIMS, seed=11)


@pytest.fixture(scope="module")
def alphabets():
    return T.synth_alphabets(n_alphabets=10, glyphs_per_alphabet=10, per_class=8,
                             dims=DIMS, seed=12)


CFG = TaskConfig(l=10, k=5, image_dims=DIMS)


# -- glyph dataset -------------------------------------------------------------------


def test_glyphs_deterministic():
    a = T.synth_glyphs(n_classes=3, per_class=4, dims=DIMS, seed=5)
    b = T.synth_glyphs(n_classes=3, per_class=4, dims=DIMS, seed=5)
    assert np.array_equal(a.images, b.images)
    c = T.synth_glyphs(n_classes=3, per_class=4, dims=DIMS, seed=6)
    assert not np.array_equal(a.images, c.images)


def test_glyphs_in_unit_range(digits):
    assert digits.images.min() >= 0.0 and digits.images.max() <= 1.0


def test_glyph_class_means_separate(digits):
    """Per-class mean images differ pairwise by more than 0.05*sqrt(pixels)."""
    n_pix = np.prod(DIMS)
    means = [digits.images[digits.class_index[c]].mean(axis=0).ravel()
             for c in range(10)]
    floor = 0.05 * np.sqrt(n_pix)
    for i in range(10):
        for j in range(i + 1, 10):
            dist = np.linalg.norm(means[i] - means[j])
            assert dist > floor, f"classes {i},{j} too close: {dist:.3f}"


def test_glyphs_rejects_tiny_canvas():
    with pytest.raises(TaskError):
        T.synth_glyphs(dims=(1, 4, 4), seed=0)


# -- IDX format ---------------------------------------------------------------------


def write_idx_images(path, images_u8):
    n, h, w = images_u8.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", T.IDX_IMAGE_MAGIC, n, h, w))
        fh.write(images_u8.tobytes())


def write_idx_labels(path, labels_u8):
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", T.IDX_LABEL_MAGIC, len(labels_u8)))
        fh.write(bytes(labels_u8))


def test_idx_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    imgs = rng.integers(0, 256, (10, 28, 28), dtype=np.uint8)
    labels = list(range(10))
    write_idx_images(tmp_path / "train-images-idx3-ubyte", imgs)
    write_idx_labels(tmp_path / "train-labels-idx1-ubyte", labels)
    ds = T.load_idx(str(tmp_path), dims=(1, 28, 28))
    assert ds.images.shape == (10, 1, 28, 28)
    assert np.array_equal(ds.labels, np.arange(10))
    # byte scaling: 255 -> 1.0, 0 -> 0.0, 7 -> label 7
    assert ds.images.max() <= 1.0
    imgs255 = np.full((2, 4, 4), 255, dtype=np.uint8)
    write_idx_images(tmp_path / "x-images-idx3-ubyte", imgs255)
    loaded = T.load_idx_images(tmp_path / "x-images-idx3-ubyte")
    assert np.all(loaded == 1.0)


def test_idx_bad_magic(tmp_path):
    p = tmp_path / "bad"
    with open(p, "wb") as fh:
        fh.write(struct.pack(">IIII", 0xDEADBEEF, 1, 2, 2))
        fh.write(bytes(4))
    with pytest.raises(TaskError, match="magic"):
        T.load_idx_images(p)


def test_idx_truncated(tmp_path):
    p = tmp_path / "short"
    with open(p, "wb") as fh:
        fh.write(struct.pack(">IIII", T.IDX_IMAGE_MAGIC, 10, 28, 28))
        fh.write(bytes(100))  # far fewer than 10*28*28
    with pytest.raises(TaskError, match="expected"):
        T.load_idx_images(p)


def test_idx_count_mismatch(tmp_path):
    imgs = np.zeros((3, 6, 6), dtype=np.uint8)
    write_idx_images(tmp_path / "train-images-idx3-ubyte", imgs)
    write_idx_labels(tmp_path / "train-labels-idx1-ubyte", [0, 1])
    with pytest.raises(TaskError, match="images vs"):
        T.load_idx(str(tmp_path), dims=(1, 6, 6))


def test_area_downscale_exact_box_means():
    img = np.arange(16, dtype=np.float64).reshape(1, 4, 4)
    out = T.area_downscale(img, (2, 2))
    expect = np.array([[img[0, :2, :2].mean(), img[0, :2, 2:].mean()],
                       [img[0, 2:, :2].mean(), img[0, 2:, 2:].mean()]])
    assert np.allclose(out[0], expect, atol=1e-12)


# -- generator purity ------------------------------------------------------------------


@pytest.mark.parametrize("task", ["perfect-recall", "parity-recall",
                                  "dynamic-dependency", "similarity-recall",
                                  "mnist-map"])
def test_generators_pure(task, digits):
    a = T.generate(task, digits, CFG, seed=77)
    b = T.generate(task, digits, CFG, seed=77)
    assert np.array_equal(a.frames, b.frames)
    assert np.array_equal(a.labels, b.labels)
    if a.actions is not None:
        assert np.array_equal(a.actions, b.actions)


def test_rotation_pure():
    a = T.gen_rotation_standin(CFG, seed=3)
    b = T.gen_rotation_standin(CFG, seed=3)
    assert np.array_equal(a.frames, b.frames)


# -- perfect recall -----------------------------------------------------------------------


def test_perfect_recall_structure(digits):
    s = T.gen_perfect_recall(digits, TaskConfig(l=20, k=5, image_dims=DIMS), seed=1)
    assert s.seq_len == 25
    for j in range(5):
        assert np.array_equal(s.frames[20 + j], s.frames[j])
    T.validate_sample(s, TaskConfig(l=20, k=5, image_dims=DIMS))


def test_perfect_recall_doubling(digits):
    cfg = TaskConfig(l=5, k=5, image_dims=DIMS)
    s = T.gen_perfect_recall(digits, cfg, seed=2)
    assert np.array_equal(s.frames[5:], s.frames[:5])


def test_perfect_recall_label_uniformity(digits):
    counts = np.zeros(10)
    for seed in range(1000):
        s = T.gen_perfect_recall(digits, CFG, seed=seed)
        for lab in s.labels[:CFG.l]:
            counts[lab] += 1
    p = stats.chisquare(counts).pvalue
    assert p > 0.001, f"prefix labels not uniform (p={p:.2e})"


# -- parity recall --------------------------------------------------------------------------


def test_parity_mapping_rule():
    assert [T.parity(x) for x in [3, 8, 4, 5, 9]] == [0, 1, 1, 0, 0]
    assert all(T.parity(x) == 1 for x in (0, 2, 4, 6, 8))


def test_parity_recall_labels(digits):
    for seed in range(200):
        s = T.gen_parity_recall(digits, CFG, seed=seed)
        T.validate_sample(s, CFG)
        for j in range(CFG.k):
            assert s.labels[CFG.l + j] == T.parity(s.labels[j])


def test_parity_recall_resamples_instances():
    """With a large instance pool, recall frames almost never coincide with a
    prefix frame (they are drawn fresh, not copied)."""
    big = T.synth_glyphs(n_classes=10, per_class=200, dims=DIMS, seed=13)
    total, distinct = 0, 0
    for seed in range(300):
        s = T.gen_parity_recall(big, CFG, seed=seed)
        for j in range(CFG.k):
            total += 1
            if not any(np.array_equal(s.frames[CFG.l + j], s.frames[i])
                       for i in range(CFG.l)):
                distinct += 1
    assert distinct / total > 0.99


def test_parity_all_even_prefix(digits):
    for seed in range(400):
        s = T.gen_parity_recall(digits, CFG, seed=seed)
        if all(l % 2 == 0 for l in s.labels[:CFG.k]):
            assert all(l == 1 for l in s.labels[CFG.l:])
            break
    else:
        pytest.skip("no all-even prefix in 400 seeds")


# -- one-shot recall -------------------------------------------------------------------------


def test_one_shot_holdout_counts(alphabets):
    assert alphabets.holdout_mask.sum() == 30  # 3 held out per alphabet


def test_one_shot_split_disjoint(alphabets):
    train_classes = set(alphabets.classes("train"))
    for seed in range(30):
        s = T.gen_one_shot(alphabets, CFG, seed=seed, split="test")
        assert set(s.labels.tolist()).isdisjoint(train_classes)
        T.validate_sample(s, CFG)


def test_one_shot_needs_holdout(digits):
    with pytest.raises(TaskError):
        T.gen_one_shot(digits, CFG, seed=0, split="test")


# -- dynamic dependency -----------------------------------------------------------------------


def test_dynamic_dependency_chain(digits):
    for seed in range(100):
        s = T.gen_dynamic_dependency(digits, CFG, seed=seed)
        T.validate_sample(s, CFG)
        # first recall frame copies the frame at the last prefix label's position
        addr = int(s.labels[CFG.l - 1])
        assert np.array_equal(s.frames[CFG.l], s.frames[addr])
        # every recall frame is bit-identical to some prefix frame
        for j in range(CFG.k):
            assert any(np.array_equal(s.frames[CFG.l + j], s.frames[i])
                       for i in range(CFG.l))


def test_dynamic_dependency_fixed_point(digits):
    for seed in range(3000):
        s = T.gen_dynamic_dependency(digits, CFG, seed=seed)
        if s.labels[CFG.l - 1] == 0 and s.labels[0] == 0:
            assert all(np.array_equal(s.frames[CFG.l + j], s.frames[0])
                       for j in range(CFG.k))
            return
    pytest.skip("no fixed-point draw found")


def test_dynamic_dependency_needs_long_prefix(digits):
    with pytest.raises(TaskError):
        T.gen_dynamic_dependency(digits, TaskConfig(l=9, k=3, image_dims=DIMS), seed=0)


# -- similarity recall ------------------------------------------------------------------------


def test_similarity_block_copies(digits):
    cfg = TaskConfig(l=20, k=5, image_dims=DIMS)
    for seed in range(100):
        s = T.gen_similarity_recall(digits, cfg, seed=seed)
        T.validate_sample(s, cfg)
        r = s.meta["r"]
        assert 1 <= r <= cfg.l - cfg.k


def test_similarity_degenerate_range(digits):
    cfg = TaskConfig(l=6, k=5, image_dims=DIMS)
    for seed in range(10):
        s = T.gen_similarity_recall(digits, cfg, seed=seed)
        assert s.meta["r"] == 1


def test_similarity_r_uniform(digits):
    cfg = TaskConfig(l=20, k=5, image_dims=DIMS)
    counts = np.zeros(cfg.l - cfg.k)
    for seed in range(3000):
        s = T.gen_similarity_recall(digits, cfg, seed=seed)
        counts[s.meta["r"] - 1] += 1
    p = stats.chisquare(counts).pvalue
    assert p > 0.001, f"r not uniform over [1, l-k] (p={p:.2e})"


# -- map task -----------------------------------------------------------------------------------


def test_map_task_structure(digits):
    for seed in range(60):
        s = T.gen_mnist_map(digits, CFG, seed=seed)
        assert s.seq_len == CFG.steps + 1
        assert s.actions.shape == (CFG.steps + 1, 4)
        T.validate_sample(s, CFG)


def test_map_displacement_bookkeeping(digits):
    for seed in range(40):
        s = T.gen_mnist_map(digits, CFG, seed=seed)
        pos = np.array(s.meta["start"])
        disp = np.zeros(2, dtype=int)
        for t in range(1, s.seq_len):
            disp += np.array(T.MOVES[int(np.argmax(s.actions[t]))])
        end_frame = s.frames[-1]
        end_pos = pos + disp
        assert 0 <= end_pos[0] < CFG.grid and 0 <= end_pos[1] < CFG.grid


def test_map_corner_moves_legal(digits):
    """When the walk sits in a corner, the emitted move is one of the 2 legal ones."""
    seen_corner = False
    for seed in range(200):
        s = T.gen_mnist_map(digits, CFG, seed=seed)
        pos = tuple(s.meta["start"])
        g = CFG.grid
        for t in range(1, s.seq_len):
            if pos in [(0, 0), (0, g - 1), (g - 1, 0), (g - 1, g - 1)]:
                seen_corner = True
                legal = [m for m, (dr, dc) in T.MOVES.items()
                         if 0 <= pos[0] + dr < g and 0 <= pos[1] + dc < g]
                assert int(np.argmax(s.actions[t])) in legal and len(legal) == 2
            move = int(np.argmax(s.actions[t]))
            pos = (pos[0] + T.MOVES[move][0], pos[1] + T.MOVES[move][1])
    assert seen_corner


# -- rotation stand-in ----------------------------------------------------------------------------


def test_rotation_schedule_spans_two_turns():
    thetas = T.rotation_schedule(CFG)
    assert thetas[0] == 0.0
    assert thetas[-1] > 0.98 * 4.0 * np.pi
    inc = np.diff(thetas)
    assert inc.max() / inc.min() > 1.5


def test_rotation_sample_valid():
    s = T.gen_rotation_standin(CFG, seed=9)
    assert s.seq_len == CFG.rotation_steps
    assert s.frames.min() >= 0.0 and s.frames.max() <= 1.0
    assert s.actions[0, 0] == 0.0
    T.validate_sample(s, CFG)


def test_rotation_second_turn_matches_first_view():
    s = T.gen_rotation_standin(CFG, seed=10)
    pano, thetas = s.meta["panorama"], s.meta["thetas"]
    for t in range(s.seq_len):
        if thetas[t] > 2.0 * np.pi:  # second turn
            same_angle = T.render_view(pano, thetas[t] % (2.0 * np.pi), 8)
            assert np.max(np.abs(s.frames[t, 0] - same_angle)) < 1e-6
            break


# -- dump format ------------------------------------------------------------------------------------


def test_dump_roundtrip(tmp_path, digits):
    samples = [T.gen_perfect_recall(digits, CFG, seed=s) for s in range(4)]
    path = tmp_path / "dump.bin"
    T.dump_samples(path, samples)
    loaded = T.load_samples(path)
    assert len(loaded) == 4
    for orig, back in zip(samples, loaded):
        assert np.array_equal(orig.frames, back.frames)
        assert np.array_equal(orig.labels, back.labels)


def test_dump_truncation_detected(tmp_path, digits):
    samples = [T.gen_perfect_recall(digits, CFG, seed=0)]
    path = tmp_path / "dump.bin"
    T.dump_samples(path, samples)
    data = path.read_bytes()
    path.write_bytes(data[:-10])
    with pytest.raises(TaskError, match="truncated"):
        T.load_samples(path)
