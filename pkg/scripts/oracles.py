"""High-precision reference values frozen into the test suite.

Run once; the printed literals are pasted into the tests. Uses mpmath only,
no code from the package.
"""
import mpmath as mp

mp.mp.dps = 50


def log_coeff_2d():
    # x = (1, missing), m = (0, 0), variances (4, 1), gamma = 1: only x_1 counts
    v = mp.mpf(4) + 1
    return -mp.log(2 * mp.pi * v) / 2 - mp.mpf(1) / (2 * v)


def nr(w):
    w = mp.mpf(w)
    return mp.npdf(w) + w * mp.ncdf(w)


def main():
    print("log_coeff_2d =", mp.nstr(log_coeff_2d(), 20))
    print("nr(1) =", mp.nstr(nr(1), 20))
    print("nr(-2.5) =", mp.nstr(nr(-2.5), 20))
    print("nr(7) =", mp.nstr(nr(7), 20))
    for x in ["-6", "-3.3", "-1.1", "-0.5", "1e-10", "0.3", "0.84375", "1", "1.25", "2", "2.857142857142857",
              "4.5", "6", "27"]:
        print(f"erf({x}) =", mp.nstr(mp.erf(mp.mpf(x)), 20), f" erfc({x}) =", mp.nstr(mp.erfc(mp.mpf(x)), 20))


if __name__ == "__main__":
    main()
