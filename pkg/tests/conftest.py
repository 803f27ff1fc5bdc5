import numpy as np
import pytest
import torch

from spotfast import config as C
from spotfast.data import SyntheticSpec, generate_synthetic_dataset

ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for name, ok, detail in ACCEPTANCE:
            terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  ({detail})")


@pytest.fixture
def report():
    def _report(name, ok, detail=""):
        ACCEPTANCE.append((name, bool(ok), detail))
        print(f"{'PASS' if ok else 'FAIL'}  {name}  ({detail})")
        return ok
    return _report


@pytest.fixture(scope="session")
def small_data(tmp_path_factory):
    """4 classes, 6 train + 3 val clips each, 29 frames of 48x48."""
    root = tmp_path_factory.mktemp("small")
    generate_synthetic_dataset(SyntheticSpec(4, 6, 29, 48, 48, seed=3, val_per_class=3), root)
    return root


@pytest.fixture
def desk4():
    return C.desk_config(num_classes=4)


def finite_difference_check(loss_fn, params, n_samples, rng, eps=1e-5, zero_tol=1e-12, noise_tol=1e-6):
    """Central differences on random scalar parameter entries.

    Samples until ``n_samples`` entries with a nonzero analytic gradient have
    been compared by relative error (denominator floored at 1e-6). Entries
    whose analytic gradient is a structural zero (``|g| < zero_tol``, e.g.
    biases feeding batch norm or attention key biases) have no meaningful
    relative error; they are checked absolutely, ``|fd| < noise_tol``, the
    float64 rounding-noise level of the difference quotient.

    Returns ``(max_rel_err, n_relative, n_zero, zero_ok)``.
    """
    params = [p for p in params if p.requires_grad]
    for p in params:
        p.grad = None
    loss = loss_fn()
    loss.backward()
    sizes = np.array([p.numel() for p in params])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    order = rng.permutation(sizes.sum())
    worst, n_rel, n_zero, zero_ok = 0.0, 0, 0, True
    with torch.no_grad():
        for flat in order:
            if n_rel >= n_samples:
                break
            i = int(np.searchsorted(offsets, flat, side="right") - 1)
            p, j = params[i], int(flat - offsets[i])
            view = p.view(-1)
            analytic = float(p.grad.view(-1)[j]) if p.grad is not None else 0.0
            orig = float(view[j])
            view[j] = orig + eps
            up = float(loss_fn())
            view[j] = orig - eps
            down = float(loss_fn())
            view[j] = orig
            fd = (up - down) / (2 * eps)
            if abs(analytic) < zero_tol:
                n_zero += 1
                zero_ok &= abs(fd) < noise_tol
                continue
            rel = abs(fd - analytic) / max(abs(fd), abs(analytic), 1e-6)
            worst = max(worst, rel)
            n_rel += 1
    return worst, n_rel, n_zero, zero_ok


def zero_dropout(module):
    for m in module.modules():
        if isinstance(m, torch.nn.Dropout):
            m.p = 0.0
        if hasattr(m, "value_dropout"):
            m.value_dropout = 0.0
    return module
