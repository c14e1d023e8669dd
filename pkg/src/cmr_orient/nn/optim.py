import numpy as np

from .layers import Parameter


def adam_step(params, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8, t: int = 1):
    """One bias-corrected Adam update of every non-frozen parameter, in place.

    Moment buffers live on the parameters and are created on first use.
    """
    if t < 1:
        raise ValueError("step count t must be >= 1")
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for p in params:
        if p.frozen:
            continue
        if p.m is None:
            p.m = np.zeros_like(p.value)
            p.v = np.zeros_like(p.value)
        g = p.grad
        p.m *= beta1
        p.m += (1.0 - beta1) * g
        p.v *= beta2
        p.v += (1.0 - beta2) * (g * g)
        p.value -= lr * (p.m / c1) / (np.sqrt(p.v / c2) + eps)


class Adam:
    def __init__(self, params: list[Parameter], lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.reset()

    def reset(self):
        self.t = 0
        for p in self.params:
            p.reset_moments()

    def step(self):
        self.t += 1
        adam_step(self.params, self.lr, self.beta1, self.beta2, self.eps, self.t)
