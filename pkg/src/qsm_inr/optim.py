import numpy as np


class Adam:
    """Adam over a list of arrays, updated in place.

    A step with all-zero gradients from fresh moments leaves parameters untouched,
    which the alternating trainer relies on when lambda is 0.
    """

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= (self.lr / bc1) * m / (np.sqrt(v / bc2) + self.eps)

    def state_arrays(self):
        return self.m + self.v

    def load_state(self, arrays, t):
        n = len(self.params)
        for dst, src in zip(self.m + self.v, arrays[: 2 * n]):
            dst[...] = src
        self.t = int(t)
