"""
Intermittency Front Lab - 随机热方程间歇性前沿的数值实验室

这个包提供协方差核、谱截断量、闭式前沿界限、Feynman-Kac 矩公式的
蒙特卡罗估计以及前沿扫描，并通过命令行 ``intermittency-lab`` 运行实验。
"""

__version__ = "1.0.0"
__author__ = "CaptainJi"
__email__ = "jiqing19861123@163.com"

from .bounds import FrontBounds, InitialCondition, ModelParams
from .errors import LabError
from .kernels import SpaceCovariance, SpectralMeasure, TimeCovariance

__all__ = [
    "FrontBounds",
    "InitialCondition",
    "LabError",
    "ModelParams",
    "SpaceCovariance",
    "SpectralMeasure",
    "TimeCovariance",
]
