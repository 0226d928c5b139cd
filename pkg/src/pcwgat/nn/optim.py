import numpy as np

from ..errors import ShapeMismatch


class Adam:
    """Adam with bias correction; updates parameter arrays in place."""

    def __init__(self, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {}
        self.v = {}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        for name, g in grads.items():
            if name not in params:
                raise ShapeMismatch(f"gradient for unknown parameter {name!r}")
            if np.shape(g) != params[name].shape:
                raise ShapeMismatch(f"{name}: gradient {np.shape(g)} vs parameter {params[name].shape}")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in params.items():
            g = grads.get(name)
            if g is None:
                continue
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def hyperparameters(self):
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps, "t": self.t}

    def state_tensors(self):
        out = {}
        for name in sorted(self.m):
            out[f"adam.m/{name}"] = self.m[name]
            out[f"adam.v/{name}"] = self.v[name]
        return out

    def load_state(self, tensors: dict, t: int) -> None:
        self.m, self.v = {}, {}
        for key, arr in tensors.items():
            kind, _, name = key.partition("/")
            if kind == "adam.m":
                self.m[name] = np.array(arr, dtype=np.float64)
            elif kind == "adam.v":
                self.v[name] = np.array(arr, dtype=np.float64)
        self.t = t


def adam_step(params: dict, grads: dict, state: Adam):
    """Functional wrapper: copies params, applies one step, returns (params, state)."""
    new = {k: np.array(v, dtype=np.float64, copy=True) for k, v in params.items()}
    state.step(new, grads)
    return new, state
