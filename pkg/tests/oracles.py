"""Independent reference implementations used only by the tests."""

import math

import mpmath as mp


def bessel_series_mp(x):
    """J0 and Y0 by their power series in extended precision.

    The working precision grows with ``x`` so that the cancellation in the
    alternating sums (terms up to ~e^x) still leaves 30 good digits.
    """
    dps = int(x * math.log10(math.e)) + 40
    with mp.workdps(dps):
        X = mp.mpf(x)
        q = (X / 2) ** 2
        term = mp.mpf(1)
        j0 = mp.mpf(0)
        s = mp.mpf(0)
        harm = mp.mpf(0)
        k = 0
        tiny = mp.mpf(10) ** (-dps + 5)
        while True:
            if k > 0:
                term *= -q / (k * k)
                harm += mp.mpf(1) / k
            j0 += term
            s -= harm * term  # (-1)^(k+1) H_k q^k / (k!)^2
            if k > 2 * x + 10 and abs(term) < tiny:
                break
            k += 1
        y0 = (2 / mp.pi) * ((mp.log(X / 2) + mp.euler) * j0 + s)
        return complex(j0), complex(y0)


def greens_h0_mp(k, r):
    j0, y0 = bessel_series_mp(k * r)
    return 0.25j * (j0.real + 1j * y0.real)
