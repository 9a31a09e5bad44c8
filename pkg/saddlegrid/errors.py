"""
例外定義モジュール
CLI の終了コード（設定エラー=2 / 数値エラー=3）に対応する例外階層。
"""


class SaddleGridError(Exception):
    """SaddleGrid の例外基底クラス"""


class ConfigError(SaddleGridError, ValueError):
    """設定値・コマンドライン引数の不正"""


class NumericalError(SaddleGridError, RuntimeError):
    """数値計算の失敗"""


class AssemblyError(NumericalError):
    """退化要素などによる有限要素組み立ての失敗"""


class FMGConvergenceError(NumericalError):
    """FMG の反復回数上限超過

    Attributes:
        level: 収束しなかったレベル
        residual_history: そのレベルでの相対残差の履歴
    """

    def __init__(self, message: str, level: int, residual_history: list[float]):
        super().__init__(message)
        self.level = level
        self.residual_history = list(residual_history)


class SeriesTruncationError(NumericalError):
    """参照解のサイン級数の打ち切りが不十分"""
