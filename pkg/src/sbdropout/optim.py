import numpy as np

from .autograd import GraphNode


def _check_lr(lr):
    # lr == 0 is allowed: it gives a frozen run, handy for instrumentation checks
    if lr < 0:
        raise ValueError(f"learning rate must be nonnegative, got {lr}")


def _check_aligned(params, grads):
    if len(params) != len(grads):
        raise ValueError(f"{len(params)} params but {len(grads)} grads")
    for p, g in zip(params, grads):
        if p.shape != np.shape(g):
            raise ValueError(f"param shape {p.shape} does not match grad shape {np.shape(g)}")


def sgd_step(params, grads, learning_rate):
    """w := w - lr * g, in place on each node's value."""
    _check_lr(learning_rate)
    _check_aligned(params, grads)
    for p, g in zip(params, grads):
        p.value = p.value - learning_rate * g


class AdamState:
    def __init__(self, params):
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in params]
        self.v = [np.zeros_like(p.value) for p in params]


def adam_step(state, params, grads, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update."""
    _check_lr(lr)
    _check_aligned(params, grads)
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for i, (p, g) in enumerate(zip(params, grads)):
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g
        m_hat = state.m[i] / c1
        v_hat = state.v[i] / c2
        p.value = p.value - lr * m_hat / (np.sqrt(v_hat) + eps)


class Optimizer:
    def __init__(self, params: list[GraphNode]):
        self.params = list(params)

    def zero_grad(self):
        for p in self.params:
            p.grad = np.zeros_like(p.value)

    def step(self):
        raise NotImplementedError


class SGD(Optimizer):
    def __init__(self, params, lr=0.01):
        super().__init__(params)
        _check_lr(lr)
        self.lr = lr

    def step(self):
        sgd_step(self.params, [p.grad for p in self.params], self.lr)


class Adam(Optimizer):
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        super().__init__(params)
        _check_lr(lr)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.state = AdamState(self.params)

    def step(self):
        adam_step(self.state, self.params, [p.grad for p in self.params],
                  self.lr, self.beta1, self.beta2, self.eps)


def make_optimizer(name, params, lr, **kwargs):
    if name == "sgd":
        return SGD(params, lr=lr)
    if name == "adam":
        return Adam(params, lr=lr, **kwargs)
    raise ValueError(f"unknown optimizer {name!r}")
