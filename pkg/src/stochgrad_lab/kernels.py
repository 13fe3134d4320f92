"""Compiled inner loops for the catalog fields and the Polya urn.

The recursions take one step per iterate, so they run as numba kernels when the
field is a catalog field. User-supplied fields keep the Python loop in
stochastic._run_recursion.
"""

import numba as nb
import numpy as np

QUADRATIC = 0
QUARTIC = 1
CIRCLE = 2
DOUBLE_WELL = 3
RIDGE = 4
LINEAR = 5
ZERO_FIELD = 6
SWIRL = 7
ROTATION = 8

FIELD_CODES = {
    "quadratic": QUADRATIC,
    "quartic": QUARTIC,
    "circle": CIRCLE,
    "double_well": DOUBLE_WELL,
    "ridge": RIDGE,
    "linear": LINEAR,
    "zero": ZERO_FIELD,
    "swirl": SWIRL,
    "rotation": ROTATION,
}

NOISE_NONE = 0
NOISE_ADDITIVE = 1
NOISE_EXCITED = 2

STATUS_OK = 0
STATUS_OVERFLOW = 1
STATUS_STOPPED = 2


@nb.njit(nogil=True)
def field_into(code, params, x, out):
    """Write F(x) of the catalog field `code` into out."""
    m = x.size
    if code == QUADRATIC:
        for i in range(m):
            out[i] = -params[0] * x[i]
    elif code == QUARTIC or code == CIRCLE:
        s = 0.0
        for i in range(m):
            s += x[i] * x[i]
        if code == CIRCLE:
            s -= 1.0
        for i in range(m):
            out[i] = -s * x[i]
    elif code == DOUBLE_WELL:
        out[0] = -(x[0] * x[0] - 1.0) * x[0]
        out[1] = -x[1]
    elif code == RIDGE:
        out[0] = -(x[0] * x[0] - 1.0) * x[0]
        out[1] = 0.0
    elif code == LINEAR:
        for i in range(m):
            out[i] = -params[i] * x[i]
    elif code == SWIRL:
        out[0] = -x[0] - params[0] * x[1]
        out[1] = -x[1] + params[0] * x[0]
    elif code == ROTATION:
        out[0] = -x[1]
        out[1] = x[0]
    else:
        for i in range(m):
            out[i] = 0.0


@nb.njit(nogil=True)
def advance(
    code,
    params,
    x,
    gam,
    rows,
    noise_mode,
    sigma,
    floor,
    noise_sign,
    store_steps,
    states,
    positions,
    stop_sq,
    max_sq,
):
    """Advance x in place by x <- x + gam[k] (F(x) + noise_sign U_k) for every k.

    `rows` holds one noise row per step, already scaled unless noise_mode is
    NOISE_EXCITED. The state after each step listed in store_steps (1-based,
    ascending) goes to states/positions; so does the state that trips stop_sq.

    Returns:
        (steps done, rows written, max |x|^2, status)
    """
    m = x.size
    f = np.empty(m)
    stored = 0
    nxt = 0
    for k in range(gam.size):
        field_into(code, params, x, f)
        if noise_mode == NOISE_EXCITED:
            s = 0.0
            for i in range(m):
                s += x[i] * x[i]
            scale = noise_sign * np.sqrt(floor + sigma * sigma * s / (1.0 + s))
            for i in range(m):
                f[i] += scale * rows[k, i]
        elif noise_mode == NOISE_ADDITIVE:
            for i in range(m):
                f[i] += noise_sign * rows[k, i]

        sq = 0.0
        for i in range(m):
            x[i] += gam[k] * f[i]
            sq += x[i] * x[i]
        if not np.isfinite(sq):
            return k + 1, stored, max_sq, STATUS_OVERFLOW
        if sq > max_sq:
            max_sq = sq

        hit = nxt < store_steps.size and store_steps[nxt] == k + 1
        if hit or sq > stop_sq:
            states[stored, :] = x
            positions[stored] = k + 1
            stored += 1
            if hit:
                nxt += 1
            if sq > stop_sq:
                return k + 1, stored, max_sq, STATUS_STOPPED
    return gam.size, stored, max_sq, STATUS_OK


@nb.njit(nogil=True)
def urn_states(uniforms, keep):
    """White proportions W_n / (n + 2) at the indices in keep (keep[0] = 0)."""
    states = np.empty(keep.size)
    states[0] = 0.5
    ptr = 1
    white = 1
    for n in range(1, uniforms.size + 1):
        x = white / (n + 1)
        if uniforms[n - 1] < x:
            white += 1
        if ptr < keep.size and keep[ptr] == n:
            states[ptr] = white / (n + 2)
            ptr += 1
    return states
