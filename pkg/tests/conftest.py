import numpy as np

from latentdyn.diffcore import Tape, Tensor


def numeric_grad(fn, arrays, h=1e-5):
    """Central finite differences of a scalar fn w.r.t. a list of arrays."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a, dtype=np.float64)
        flat = a.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            hi = fn(*arrays)
            flat[i] = orig - h
            lo = fn(*arrays)
            flat[i] = orig
            gflat[i] = (hi - lo) / (2.0 * h)
        grads.append(g)
    return grads


def check_grads(build, arrays, rtol=1e-6, atol=1e-8, h=1e-5):
    """Compare tape gradients of build(*tensors) against finite differences.

    build receives Tensors (requires_grad=True) and returns a scalar Tensor.
    """
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    with Tape() as tape:
        loss = build(*tensors)
    tape.backward(loss)
    analytic = [t.grad for t in tensors]

    def scalar_fn(*arrs):
        ts = [Tensor(a) for a in arrs]
        return build(*ts).item()

    numeric = numeric_grad(scalar_fn, [a.copy() for a in arrays], h=h)
    for a_g, n_g in zip(analytic, numeric):
        assert a_g is not None
        np.testing.assert_allclose(a_g, n_g, rtol=rtol, atol=atol)
