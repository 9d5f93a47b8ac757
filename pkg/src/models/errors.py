"""
异常定义模块
数据错误与数值错误的层次结构，CLI据此映射退出码
"""
from typing import Optional


class DualViewError(Exception):
    """所有领域异常的基类"""


class DataError(DualViewError, ValueError):
    """
    数据错误

    数据集维度不一致、取值非法、文件缺失等情况
    """

    def __init__(self, message: str, index: Optional[object] = None):
        """
        Args:
            message: 错误信息
            index: 出错位置（行/列索引或文件名），未知则为None
        """
        super().__init__(message)
        self.index = index


class NumericalError(DualViewError, ArithmeticError):
    """数值计算失败"""


class NotSPDError(NumericalError):
    """矩阵不是对称正定的（Cholesky分解失败）"""

    def __init__(self, what: str = "matrix"):
        super().__init__(f"{what} not SPD")
        self.what = what


class ARSError(NumericalError):
    """自适应拒绝采样失败"""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


class ChainAbortedError(NumericalError):
    """
    马尔可夫链中途失败

    保留最后一次成功的迭代号，便于从断点恢复
    """

    def __init__(self, message: str, iteration: int, cause: Optional[BaseException] = None):
        super().__init__(message)
        self.iteration = iteration
        self.cause = cause
