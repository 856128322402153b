"""pytest配置"""

import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

# 添加项目根目录到路径
sys.path.insert(0, str(Path(__file__).parent.parent))

settings.register_profile("sphereflow", max_examples=60, deadline=None)
settings.load_profile("sphereflow")


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
