import numpy as np
from hypothesis import given, strategies as st

from bprelab import _kernels as K
from bprelab.engine import replicate_seeds
from bprelab.rng import MASK64, Stream, as_seed, mix, mix_many

U64 = st.integers(min_value=0, max_value=MASK64)


def _splitmix_ref(x):
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return x, z ^ (z >> 31)


def _xoshiro_ref(state, count):
    s = list(state)
    rotl = lambda x, k: ((x << k) | (x >> (64 - k))) & MASK64
    out = []
    for _ in range(count):
        out.append((rotl((s[1] * 5) & MASK64, 7) * 9) & MASK64)
        t = (s[1] << 17) & MASK64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = rotl(s[3], 45)
    return out


def test_splitmix_first_output_known_value():
    state = np.empty(4, dtype=np.uint64)
    K.seed_state(np.uint64(0), state)
    assert int(state[0]) == 0xE220A8397B1DCDAF


@given(U64)
def test_stream_matches_reference_xoshiro(seed):
    x = seed
    words = []
    for _ in range(4):
        x, w = _splitmix_ref(x)
        words.append(w)
    want = _xoshiro_ref(words, 8)
    state = np.empty(4, dtype=np.uint64)
    K.seed_state(as_seed(seed), state)
    got = [int(K.next_u64(state)) for _ in range(8)]
    assert got == want


@given(U64, st.integers(min_value=0, max_value=2**40))
def test_mix_python_and_compiled_agree(seed, r):
    assert int(K.mix(np.uint64(seed), np.uint64(r))) == mix(seed, r)


def test_replicate_seeds_match_mix():
    got = replicate_seeds(12345, 50, start=7)
    assert list(map(int, got)) == [mix(12345, r) for r in range(7, 57)]
    assert np.array_equal(mix_many(12345, 50, 7), got)


def test_mix_distinct_over_many_replicates():
    seeds = replicate_seeds(0, 100_000)
    assert np.unique(seeds).size == seeds.size


def test_uniform_open_interval_and_moments():
    s = Stream(42)
    u = np.array([s.uniform() for _ in range(20_000)])
    assert u.min() > 0.0 and u.max() < 1.0
    assert abs(u.mean() - 0.5) < 0.01
    assert abs(u.var() - 1 / 12) < 0.003


def test_stream_reproducible():
    a, b = Stream(9), Stream(9)
    assert [a.uniform() for _ in range(10)] == [b.uniform() for _ in range(10)]
