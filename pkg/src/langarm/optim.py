"""Adam optimizer with bias-corrected moment estimates."""

from __future__ import annotations

import numpy as np

from .params import ParamStore


class NanGradient(Exception):
    """A parameter gradient contained NaN or inf; carries diagnostics."""

    def __init__(self, tensor_name: str, bad_count: int, total: int):
        self.tensor_name = tensor_name
        self.bad_count = bad_count
        self.total = total
        super().__init__(
            f"non-finite gradient in {tensor_name!r}: {bad_count}/{total} entries"
        )


class Adam:
    def __init__(self, store: ParamStore, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.store = store
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.moment1 = {k: np.zeros_like(t.data) for k, t in store.items()}
        self.moment2 = {k: np.zeros_like(t.data) for k, t in store.items()}

    def step(self):
        """Apply one update from the accumulated gradients.

        Parameters whose gradient is None are skipped entirely (their moments
        do not decay). Non-finite gradients raise NanGradient before any
        parameter is touched.
        """
        for name, t in self.store.items():
            if t.grad is not None and not np.all(np.isfinite(t.grad)):
                bad = int(np.size(t.grad) - np.isfinite(t.grad).sum())
                raise NanGradient(name, bad, int(np.size(t.grad)))
        self.step_count += 1
        b1t = 1.0 - self.beta1 ** self.step_count
        b2t = 1.0 - self.beta2 ** self.step_count
        for name, t in self.store.items():
            g = t.grad
            if g is None:
                continue
            m = self.moment1[name]
            v = self.moment2[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            t.data -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)
