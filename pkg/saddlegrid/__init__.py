"""
SaddleGrid - 分布最適制御問題の KKT 系に対する幾何マルチグリッド
β に頑健な W/V サイクル・FMG と、誤差伝播作用素の縮小率計測ハーネスを提供します。
"""

__version__ = "0.3.0"
__app_name__ = "SaddleGrid"
