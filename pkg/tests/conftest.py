import numpy as np
import pytest

from leakaudit.datamodel import Dataset, DatasetMeta, Sample, segment_recording

_ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, name: str, passed: bool, detail: str) -> None:
    """Collect a one-line verdict that is echoed in the terminal summary."""
    _ACCEPTANCE_LINES.append(f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2} "
                             f"{name}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def make_meta(n_subjects, n_classes, T=2, C=1, name="toy"):
    return DatasetMeta(name=name, n_timestamps=T, n_channels=C,
                       class_names=tuple(f"c{k}" for k in range(n_classes)),
                       subject_ids=tuple(f"s{z}" for z in range(n_subjects)))


def random_dataset(rng: np.random.Generator, *, kind="any", max_subjects=6, max_per_subject=12,
                   min_subjects=1, min_per_subject=1,
                   T=None, C=None, spans=None) -> Dataset:
    """Small random dataset; ``kind="type3"`` gives one class per subject."""
    S = int(rng.integers(min_subjects, max_subjects + 1))
    K = int(rng.integers(1, 4))
    T = T or int(rng.integers(1, 4))
    C = C or int(rng.integers(1, 3))
    with_spans = rng.random() < 0.5 if spans is None else spans
    samples = []
    for z in range(S):
        m = int(rng.integers(min_per_subject, max_per_subject + 1))
        subject_class = int(rng.integers(K))
        stride = int(rng.integers(1, 4))
        order = rng.permutation(m)
        for j in range(m):
            label = subject_class if kind == "type3" else int(rng.integers(K))
            t = int(order[j])
            span = (t * stride, t * stride + 4) if with_spans else None
            rec = f"r{z}" if with_spans else None
            samples.append(Sample(z, label, t, rng.standard_normal((T, C)), rec, span))
    rng.shuffle(samples)
    return Dataset(make_meta(S, K, T, C), samples)


def windowed_dataset(n_subjects=2, L=100, window_len=20, overlap=0.8, K=2, seed=0) -> Dataset:
    """Single-recording-per-subject windowed cohort for overlap tests."""
    rng = np.random.default_rng(seed)
    samples = []
    for z in range(n_subjects):
        labels = np.full(L, z % K)
        samples += segment_recording(rng.standard_normal((L, 1)), z, labels, window_len,
                                     overlap, recording_id=f"rec{z}")
    return Dataset(make_meta(n_subjects, K, window_len, 1), samples)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def finite_difference_errors(params, X, y, n_coords, rng, step=1e-5):
    """Relative errors between analytic and centered-difference gradients.

    Coordinates are sampled uniformly over every parameter entry; the error
    is ``|a - n| / max(|a|, |n|, 1e-7)``.
    """
    from leakaudit.classifier import MLPParams, loss_and_grad

    params = params.astype(np.float64)
    _, grads = loss_and_grad(params, X, y)
    arrays = params.arrays()
    sizes = np.array([a.size for a in arrays])
    flat_pick = rng.choice(sizes.sum(), size=n_coords, replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    errors = []
    for f in flat_pick:
        which = int(np.searchsorted(offsets, f, side="right") - 1)
        pos = np.unravel_index(f - offsets[which], arrays[which].shape)
        plus = [a.copy() for a in arrays]
        minus = [a.copy() for a in arrays]
        plus[which][pos] += step
        minus[which][pos] -= step
        lp, _ = loss_and_grad(MLPParams.from_arrays(plus), X, y)
        lm, _ = loss_and_grad(MLPParams.from_arrays(minus), X, y)
        numeric = (lp - lm) / (2 * step)
        analytic = grads.arrays()[which][pos]
        errors.append(abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-7))
    return np.array(errors)
