"""錯誤類別與 CLI 結束代碼。"""

from __future__ import annotations

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_INVALID = 2
EXIT_NUMERICAL = 3


class ThreeTermError(Exception):
    """本套件所有錯誤的共同基底。"""


class InvalidInput(ThreeTermError, ValueError):
    """輸入資料、維度或參數不合法。"""


class NumericalError(ThreeTermError, ArithmeticError):
    """數值計算失敗（SVD 不收斂、誤差為負等）。"""


def exit_code_for(exc: BaseException) -> int:
    """把例外對應到 CLI 結束代碼。"""
    if isinstance(exc, InvalidInput):
        return EXIT_INVALID
    if isinstance(exc, NumericalError):
        return EXIT_NUMERICAL
    return EXIT_FAILURE


__all__ = [
    "EXIT_FAILURE",
    "EXIT_INVALID",
    "EXIT_NUMERICAL",
    "EXIT_OK",
    "InvalidInput",
    "NumericalError",
    "ThreeTermError",
    "exit_code_for",
]
