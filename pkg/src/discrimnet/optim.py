"""SGD with momentum, coupled weight decay, and a step learning-rate drop."""

import numpy as np

from .tensor import NonFiniteError


def lr_at_epoch(epoch, base_lr, drop_factor, drop_period):
    """Step schedule: base_lr divided by drop_factor every drop_period epochs."""
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    return base_lr / drop_factor ** (int(epoch) // int(drop_period))


class SGD:
    """Momentum SGD with L2 weight decay folded into the gradient.

    Per parameter: g' = g + weight_decay * w; v <- momentum * v + g';
    w <- w - lr * v. Decay applies to weights and biases alike. The step
    aborts, touching nothing, if any gradient is non-finite.
    """

    def __init__(self, momentum=0.9, weight_decay=0.01, base_lr=0.01,
                 drop_factor=10.0, drop_period=50):
        if base_lr <= 0:
            raise ValueError("base_lr must be positive")
        self.momentum = float(momentum)
        self.weight_decay = float(weight_decay)
        self.base_lr = float(base_lr)
        self.drop_factor = float(drop_factor)
        self.drop_period = int(drop_period)
        self.velocity = {}

    def lr_at_epoch(self, epoch):
        return lr_at_epoch(epoch, self.base_lr, self.drop_factor, self.drop_period)

    def step(self, params, grads, lr):
        """Apply one update to every (name, array) pair in params.

        grads maps parameter names to gradient arrays of matching shape.
        """
        for name, w in params:
            g = grads[name]
            if g.shape != w.shape:
                raise ValueError(f"gradient for {name} has shape {g.shape}, "
                                 f"parameter has {w.shape}")
            if not np.all(np.isfinite(g)):
                raise NonFiniteError(f"non-finite gradient for parameter {name}; step aborted")
        for name, w in params:
            g = grads[name]
            if self.weight_decay:
                g = g + self.weight_decay * w
            v = self.velocity.get(name)
            if v is None:
                v = np.zeros_like(w)
                self.velocity[name] = v
            v *= self.momentum
            v += g
            w -= lr * v

    def state_arrays(self):
        return {f"velocity.{name}": v for name, v in self.velocity.items()}

    def load_state_arrays(self, arrays):
        for key, arr in arrays.items():
            if key.startswith("velocity."):
                name = key.split(".", 1)[1]
                self.velocity[name] = np.asarray(arr, dtype=np.float64).copy()
