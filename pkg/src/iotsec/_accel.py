"""Optional compiled Ascon permutation.

Used by :mod:`iotsec.crypto` when numba is importable and the environment
variable ``IOTSEC_PURE_PYTHON`` is unset.  Results are bit-identical to the
pure Python permutation; the tests check both paths against each other.
"""

from numba import njit, types, uint64

_SIG = types.UniTuple(uint64, 5)(uint64, uint64, uint64, uint64, uint64, types.int64)


@njit(_SIG, cache=True)
def permute(x0, x1, x2, x3, x4, rounds):
    for r in range(12 - rounds, 12):
        x2 ^= uint64(0xF0 - r * 0x10 + r)
        x0 ^= x4
        x4 ^= x3
        x2 ^= x1
        t0 = ~x0 & x1
        t1 = ~x1 & x2
        t2 = ~x2 & x3
        t3 = ~x3 & x4
        t4 = ~x4 & x0
        x0 ^= t1
        x1 ^= t2
        x2 ^= t3
        x3 ^= t4
        x4 ^= t0
        x1 ^= x0
        x0 ^= x4
        x3 ^= x2
        x2 = ~x2
        x0 ^= ((x0 >> uint64(19)) | (x0 << uint64(45))) ^ ((x0 >> uint64(28)) | (x0 << uint64(36)))
        x1 ^= ((x1 >> uint64(61)) | (x1 << uint64(3))) ^ ((x1 >> uint64(39)) | (x1 << uint64(25)))
        x2 ^= ((x2 >> uint64(1)) | (x2 << uint64(63))) ^ ((x2 >> uint64(6)) | (x2 << uint64(58)))
        x3 ^= ((x3 >> uint64(10)) | (x3 << uint64(54))) ^ ((x3 >> uint64(17)) | (x3 << uint64(47)))
        x4 ^= ((x4 >> uint64(7)) | (x4 << uint64(57))) ^ ((x4 >> uint64(41)) | (x4 << uint64(23)))
    return x0, x1, x2, x3, x4
