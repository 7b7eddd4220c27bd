"""Pure numpy fallback for the compiled im2col / col2im kernels."""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _pad(x, ph, pw):
    return np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x


def im2col(x, kh, kw, sh, sw, ph, pw, ho, wo):
    """(N, C, H, W) -> (N*ho*wo, C*kh*kw), columns ordered (c, ki, kj)."""
    xp = _pad(x, ph, pw)
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw][:, :, :ho, :wo]
    # (N, C, ho, wo, kh, kw) -> (N, ho, wo, C, kh, kw)
    n_batch, c_in = x.shape[:2]
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n_batch * ho * wo, c_in * kh * kw)


def col2im(cols, n_batch, c_in, h, w, kh, kw, sh, sw, ph, pw, ho, wo):
    """Adjoint of :func:`im2col`; taps are added in descending (ki, kj) order."""
    hp, wp = h + 2 * ph, w + 2 * pw
    out = np.zeros((n_batch, c_in, hp, wp), dtype=np.float64)
    blocks = cols.reshape(n_batch, ho, wo, c_in, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    for ki in reversed(range(kh)):
        for kj in reversed(range(kw)):
            out[:, :, ki:ki + sh * (ho - 1) + 1:sh, kj:kj + sw * (wo - 1) + 1:sw] += blocks[:, :, ki, kj]
    return np.ascontiguousarray(out[:, :, ph:ph + h, pw:pw + w])
