import numpy as np
import pytest

from autosizer.model import ModelConfig, Transformer


def central_difference(f, arr: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Numerical gradient of scalar ``f()`` w.r.t. every entry of ``arr`` (mutated in place, restored)."""
    grad = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = arr[i]
        arr[i] = orig + h
        fp = f()
        arr[i] = orig - h
        fm = f()
        arr[i] = orig
        grad[i] = (fp - fm) / (2 * h)
    return grad


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


@pytest.fixture
def tiny_config():
    return ModelConfig(num_layers=1, d_model=8, num_heads=2, d_ffn=16, vocab_size=11,
                       max_positions=32, dropout=0.0)


@pytest.fixture
def tiny_model(tiny_config):
    return Transformer(tiny_config, seed=3)


def random_batch(rng, vocab, batch, src_len, tgt_len, pad_tail=True):
    """Random ids in [4, vocab) with ragged PAD tails; position 0 of the target is BOS."""
    src = rng.integers(4, vocab, (batch, src_len))
    tgt = rng.integers(4, vocab, (batch, tgt_len))
    tgt[:, 0] = 1
    if pad_tail:
        for b in range(batch):
            src[b, rng.integers(2, src_len + 1):] = 0
            tgt[b, rng.integers(2, tgt_len + 1):] = 0
    return src, tgt


def kill_groups(model, dead):
    """Zero the listed rows of each matrix in place (constructed dead groups)."""
    for path, rows in dead.items():
        model.params[path].data[list(rows)] = 0.0
    return model


def random_inputs(rng, vocab, count, max_len=6):
    """``count`` single-sentence (src, tgt_in) pairs of random lengths."""
    out = []
    for _ in range(count):
        src, tgt = random_batch(rng, vocab, 1, int(rng.integers(1, max_len + 1)), int(rng.integers(1, max_len + 1)),
                                pad_tail=False)
        out.append((src, tgt))
    return out


def max_logit_gap(a, b, inputs):
    return max(float(np.max(np.abs(a(s, t).data - b(s, t).data))) for s, t in inputs)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
