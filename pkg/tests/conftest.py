import numpy as np
import pytest

from depdistill.conllu import parse_conllu

FIG1 = """# text = The son of the cat hunts the rat
1\tThe\tthe\tDET\t_\t_\t2\tdet\t_\t_
2\tson\tson\tNOUN\t_\t_\t6\tnsubj\t_\t_
3\tof\tof\tADP\t_\t_\t5\tcase\t_\t_
4\tthe\tthe\tDET\t_\t_\t5\tdet\t_\t_
5\tcat\tcat\tNOUN\t_\t_\t2\tnmod\t_\t_
6\thunts\thunt\tVERB\t_\t_\t0\troot\t_\t_
7\tthe\tthe\tDET\t_\t_\t8\tdet\t_\t_
8\trat\trat\tNOUN\t_\t_\t6\tobj\t_\t_

"""


@pytest.fixture
def fig1_text():
    return FIG1


@pytest.fixture
def fig1():
    return parse_conllu(FIG1)[0]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
