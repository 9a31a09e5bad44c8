"""
SaddleGrid - セットアップスクリプト

使い方:
    pip install -e .
"""

import re
from setuptools import find_packages, setup


def get_version():
    """saddlegrid/__init__.py からバージョンを動的に読み込む"""
    with open("saddlegrid/__init__.py", "r") as f:
        content = f.read()
    match = re.search(r'^__version__\s*=\s*["\']([^"\']+)["\']', content, re.MULTILINE)
    if not match:
        raise RuntimeError("バージョン情報が見つかりません")
    return match.group(1)


def get_requirements():
    """requirements.txt からテスト用以外の依存を読む"""
    with open("requirements.txt", "r") as f:
        lines = [line.strip() for line in f]
    return [line for line in lines if line and not line.startswith("#") and not line.startswith("pytest")]


setup(
    name="SaddleGrid",
    version=get_version(),
    description="β-robust multigrid for the optimality system of elliptic distributed optimal control",
    packages=find_packages(exclude=["tests"]),
    py_modules=["main"],
    python_requires=">=3.10",
    install_requires=get_requirements(),
    extras_require={"test": ["pytest>=8.0"]},
    entry_points={"console_scripts": ["saddlegrid=main:main"]},
)
