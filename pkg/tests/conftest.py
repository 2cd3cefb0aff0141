import numpy as np
import pytest

from misslayer.density import GmmParams, MissingPoint


def random_gmm(rng, k, d, spread=1.0, log_var_scale=0.5, gamma=1e-6):
    return GmmParams(rng.standard_normal(k), spread * rng.standard_normal((k, d)),
                     log_var_scale * rng.standard_normal((k, d)), gamma)


def random_point(rng, d, p_missing=0.5, at_least_one=True):
    mask = rng.random(d) < p_missing
    if at_least_one:
        mask[rng.integers(0, d)] = True
    values = rng.standard_normal(d)
    values[mask] = np.nan
    return MissingPoint(np.where(mask, 0.0, values), mask)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def reduction_trajectories(data, hidden, n_out, loss, epochs=10, seed=0, lr=1e-2):
    """Train a generalized and a classical network with the same seed on
    complete data; returns the per-epoch checkpoints of both."""
    from misslayer import nn
    from misslayer.density import em_fit

    def layers(first):
        out = [nn.LayerSpec(first, hidden[0], "relu")]
        out += [nn.LayerSpec("dense", w, "relu") for w in hidden[1:]]
        out.append(nn.LayerSpec("dense", n_out, "softmax" if loss == "cross-entropy" else "linear"))
        return out

    density = em_fit(data, 2, seed=seed)
    gen = nn.NetworkModel.build(data.d, layers("generalized-relu"), loss, density=density, seed=seed)
    cls = nn.NetworkModel.build(data.d, layers("dense"), loss, seed=seed)
    cfg = nn.TrainConfig(epochs=epochs, lr=lr, batch_size=16, seed=seed)
    snaps = {"gen": [], "cls": []}
    for name, model in (("gen", gen), ("cls", cls)):
        nn.train(model, data, cfg,
                 checkpoint=lambda e, m, name=name: snaps[name].append(m.to_dict()["layers"]))
    return snaps["gen"], snaps["cls"]


ACCEPTANCE_LINES = []


def record_acceptance(number, passed, detail):
    line = f"ACCEPTANCE {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
