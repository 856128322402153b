"""sphereflow - 超球面嵌入的条件黎曼流匹配密度估计与不确定性评分"""

__version__ = "0.1.0"
