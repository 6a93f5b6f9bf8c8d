from fractions import Fraction
import math


def floor_mul(*factors) -> int:
    """Floor of a product, evaluated on the decimal values of the factors.

    ``floor_mul(100, 0.29)`` is 29, whereas ``math.floor(100 * 0.29)`` is 28.
    Ratios in configs are written as decimals, so their decimal value is the
    one that gets floored.
    """
    prod = Fraction(1)
    for f in factors:
        prod *= f if isinstance(f, int) else Fraction(repr(float(f)))
    return math.floor(prod)
