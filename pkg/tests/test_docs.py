import doctest

import pytest

import dudornet.estimator
import dudornet.model


@pytest.mark.parametrize("module", [dudornet.model, dudornet.estimator])
def test_docstring_examples(module):
    result = doctest.testmod(module)
    assert result.attempted > 0 and result.failed == 0
