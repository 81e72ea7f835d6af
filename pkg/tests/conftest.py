import numpy as np
import pytest

from spectra.model import SpectraConfig, backward, build_model, forward
from spectra.tensor import Rng
from spectra.train import cross_entropy, cross_entropy_grad_logits

# Small config used throughout the gradient suite.
GRADCHECK_CONFIG = dict(T=32, C=2, K=3, n_fft=8, hop=4, k=3, D=3, H=4,
                        dropout_p=0.0)


def finite_diff_max_rel_err(config: SpectraConfig, data_seed: int,
                            step: float = 1e-5, batch: int = 2) -> float:
    """Central finite differences vs analytic gradients for every learnable
    parameter of the full network; returns the worst relative error."""
    model = build_model(config)
    rng = Rng(data_seed)
    x = rng.normal((batch, config.T, config.C))
    labels = np.arange(batch) % config.K

    def loss():
        return cross_entropy(forward(model, x, training=True), labels)

    probs, caches = forward(model, x, training=True, with_cache=True)
    grads = backward(model, caches, cross_entropy_grad_logits(probs, labels))

    worst = 0.0
    for name in model.learnable_names():
        flat = model.tensors[name].reshape(-1)
        gf = np.asarray(grads[name]).reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            lp = loss()
            flat[i] = orig - step
            lm = loss()
            flat[i] = orig
            num = (lp - lm) / (2 * step)
            worst = max(worst, abs(num - gf[i]) / max(abs(num), abs(gf[i]), 1e-8))
    return worst


@pytest.fixture(scope="session")
def tiny_synth():
    """Small synthetic split shared by the slower end-to-end tests."""
    from spectra import data

    train_rec, test_rec = data.synth_dataset(3, 30.0, seed=11)
    train = data.normalize(data.make_windows(train_rec))
    test = data.normalize(data.make_windows(test_rec), train.norm_stats)
    return train, test
