"""Finite-difference gradient verification in float64.

Central differences against autograd: the independent numeric route the
property suite uses to certify backpropagation through the attention pool,
the fusion gate, and the encoder layers.
"""

from __future__ import annotations

from collections.abc import Callable

import torch


def autograd_gradients(
    loss_fn: Callable[[], torch.Tensor], tensors: list[torch.Tensor]
) -> list[torch.Tensor]:
    for t in tensors:
        if t.grad is not None:
            t.grad = None
    loss = loss_fn()
    loss.backward()
    return [
        t.grad.detach().clone() if t.grad is not None else torch.zeros_like(t)
        for t in tensors
    ]


def finite_difference_gradients(
    loss_fn: Callable[[], torch.Tensor],
    tensors: list[torch.Tensor],
    step: float = 1e-5,
) -> list[torch.Tensor]:
    """Central differences, perturbing one element at a time."""
    grads = []
    with torch.no_grad():
        for t in tensors:
            g = torch.zeros_like(t)
            flat = t.view(-1)
            gflat = g.view(-1)
            for i in range(flat.numel()):
                original = flat[i].item()
                flat[i] = original + step
                plus = float(loss_fn())
                flat[i] = original - step
                minus = float(loss_fn())
                flat[i] = original
                gflat[i] = (plus - minus) / (2.0 * step)
            grads.append(g)
    return grads


def max_relative_error(
    analytic: list[torch.Tensor], numeric: list[torch.Tensor], floor: float = 1e-6
) -> float:
    """max over elements of |a - n| / max(|a|, |n|, floor)."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = torch.maximum(torch.maximum(a.abs(), n.abs()), torch.full_like(a, floor))
        worst = max(worst, float(((a - n).abs() / denom).max()))
    return worst


def check_gradients(
    loss_fn: Callable[[], torch.Tensor],
    tensors: list[torch.Tensor],
    step: float = 1e-5,
    floor: float = 1e-6,
) -> float:
    """Compare autograd against central differences; returns max rel error."""
    for t in tensors:
        if t.dtype != torch.float64:
            raise ValueError("gradient verification must run in float64")
    analytic = autograd_gradients(loss_fn, tensors)
    numeric = finite_difference_gradients(loss_fn, tensors, step)
    return max_relative_error(analytic, numeric, floor)
