import random

import pytest

from prekms.group import MODP2048, TOY23


@pytest.fixture
def toy():
    return TOY23


@pytest.fixture
def big():
    return MODP2048


@pytest.fixture
def rng():
    return random.Random(0xC0FFEE)


class ScriptedRng:
    """Returns scripted values from randrange, for pinning worked examples."""

    def __init__(self, values):
        self.values = list(values)
        self._fallback = random.Random(0)

    def randrange(self, *args, **kwargs):
        if self.values:
            return self.values.pop(0)
        return self._fallback.randrange(*args, **kwargs)

    def getrandbits(self, k):
        return self._fallback.getrandbits(k)

    def sample(self, population, k):
        return self._fallback.sample(population, k)


@pytest.fixture
def scripted():
    return ScriptedRng
