# %% [markdown]
# # A minimal reverse-mode tensor engine
#
# Everything in this package runs on a small numpy-backed tape: operations
# record themselves in execution order, `backward` replays the tape in
# reverse, and gradients accumulate into leaf tensors with `+=` until the
# trainer zeroes them. This notebook-style script walks the basics.

# %%
import numpy as np

from ovmask import autodiff as ad
from ovmask.autodiff import Tensor, grad_check

x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]], dtype=np.float32), requires_grad=True)
w = Tensor(np.array([[0.5, -1.0], [0.25, 2.0]], dtype=np.float32), requires_grad=True)

loss = ad.mean(ad.gelu(ad.matmul(x, w)))
loss.backward()
print("loss:", loss.item())
print("dL/dw:\n", w.grad)

# %% [markdown]
# ## Central-difference checking
#
# `grad_check` re-evaluates the computation with float64 shadows of the
# checked tensors and compares central differences against the recorded
# backward rules. For a plain sum the relative error is exactly zero.

# %%
x.zero_grad()
w.zero_grad()
print("sum-of-entries error:", grad_check(lambda: ad.tsum(x), x))
print("gelu-matmul error:   ", grad_check(lambda: ad.mean(ad.gelu(ad.matmul(x, w))), [x, w]))

# %% [markdown]
# ## Stop-gradient
#
# `stop_gradient` passes values through untouched and contributes nothing on
# the way back. The product rule with one blocked branch leaves exactly the
# blocked factor's values as the gradient.

# %%
v = Tensor(np.array([1.0, -2.0, 3.0], dtype=np.float32), requires_grad=True)
ad.tsum(ad.mul(v, ad.stop_gradient(v))).backward()
print("d/dv sum(v * sg(v)) =", v.grad, "== v:", np.array_equal(v.grad, v.data))
