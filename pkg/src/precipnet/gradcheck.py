"""
Randomized finite-difference checks of backpropagation over small networks.
"""
from dataclasses import dataclass

import numpy as np

from . import nn

FAIL_THRESHOLD = 1e-4


@dataclass(frozen=True)
class CheckCase:
    name: str
    n_parameters: int
    max_rel_error: float

    @property
    def passed(self):
        return self.max_rel_error < FAIL_THRESHOLD


def _margin(net, x, y, config, seed):
    """Distance of the batch from the nearest non-differentiable point."""
    out, cache = nn.forward(net, x, "train", seed=seed)
    margins = [np.inf]
    for spec, z in zip(net.layers, cache.act_in):
        if spec.activation == "relu":
            margins.append(np.min(np.abs(z)))
    if config.loss == "lp" and config.p == 1:
        margins.append(np.min(np.abs(out - y)))
    return float(min(margins))


def random_case(rng, h=1e-5, batch_size=8, min_margin=None, max_tries=50):
    """Draw a small network, loss and kink-free batch.

    Returns ``(net, (x, y), config, description, mask_seed)``.
    """
    min_margin = 100.0 * h if min_margin is None else min_margin
    n_layers = int(rng.integers(2, 7))
    n_in = int(rng.integers(2, 6))
    widths = [int(rng.integers(2, 7)) for _ in range(n_layers - 1)]
    loss = ["cross_entropy", "l1", "l2"][int(rng.integers(3))]
    batch_norm = bool(rng.integers(2))
    dropout = 0.2 if rng.random() < 0.3 else 0.0
    if loss == "cross_entropy":
        n_out, out_act, cfg = int(rng.integers(2, 5)), "softmax", nn.TrainConfig()
    else:
        n_out = int(rng.integers(1, 3))
        out_act = "linear" if rng.random() < 0.5 else "relu"
        cfg = nn.TrainConfig(loss="lp", p=1 if loss == "l1" else 2)
    specs = nn.dense_stack(n_in, widths, n_out, out_act, batch_norm, dropout)
    net = nn.init_network(specs, seed=int(rng.integers(2**31)))
    # random biases keep narrow deep stacks from collapsing onto the ReLU kink
    net.biases = [rng.normal(0.0, 0.5, size=b.shape) for b in net.biases]
    if out_act == "relu":
        net.biases[-1] += 1.0
    for _ in range(max_tries):
        x = rng.normal(size=(batch_size, n_in))
        if loss == "cross_entropy":
            y = np.eye(n_out)[rng.integers(n_out, size=batch_size)]
        else:
            y = rng.normal(size=(batch_size, n_out))
        seed = int(rng.integers(2**31))
        if _margin(net, x, y, cfg, seed) > min_margin:
            break
    else:
        raise RuntimeError("could not draw a kink-free batch")
    desc = (f"{n_layers} layers {[n_in] + widths + [n_out]} {loss} "
            f"{'bn ' if batch_norm else ''}{'dropout ' if dropout else ''}{out_act}")
    return net, (x, y), cfg, desc.strip(), seed


def run_matrix(n_nets=20, seed=0, h=1e-5, corrupt=None):
    """grad_check over ``n_nets`` random cases; ``corrupt`` injects a fault."""
    rng = np.random.default_rng(seed)
    cases = []
    for _ in range(n_nets):
        net, batch, cfg, desc, mask_seed = random_case(rng, h)
        err = nn.grad_check(net, batch, cfg, h=h, seed=mask_seed, corrupt=corrupt)
        cases.append(CheckCase(desc, net.n_parameters(), err))
    return cases


def double_first_entry(grads):
    """Fault hook: scale one gradient coordinate by 2."""
    flat = grads[0].reshape(-1)
    flat[0] = 2.0 * flat[0] if flat[0] != 0.0 else 1.0
    return grads
