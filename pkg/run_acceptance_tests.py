#!/usr/bin/env python3
"""受け入れテスト実行スクリプト

縮小版の学習（選択ソート・加算・アブレーション・最小値選択）を含むテストを実行します。
CPUで数時間かかります。

使用方法:
    python run_acceptance_tests.py [--coverage] [-k EXPRESSION]

オプション:
    --coverage  カバレッジレポートを生成
    -k          実行するテストを絞り込むpytestの式
"""

import os
import sys
import pytest
import argparse
import coverage
from typing import List, Optional


def run_tests(enable_coverage: bool = False, keyword: Optional[str] = None) -> int:
    """slowマーカー付きのテストを実行する

    Args:
        enable_coverage (bool): カバレッジレポートを生成するかどうか
        keyword (str): pytestの -k 式

    Returns:
        int: テスト実行結果のステータスコード
    """
    pytest_args: List[str] = ["-v", "-m", "slow", "tests"]
    if keyword:
        pytest_args += ["-k", keyword]

    if enable_coverage:
        cov = coverage.Coverage(source=["nee"])
        cov.start()

    result = pytest.main(pytest_args)

    if enable_coverage:
        cov.stop()
        cov.save()

        print("\nカバレッジレポート:")
        cov.report()

        cov.html_report(directory="coverage_report")
        print(f"\nHTMLレポートが生成されました: {os.path.abspath('coverage_report/index.html')}")

    if result == 0:
        print("\n✅ すべての受け入れテストが成功しました！")
    else:
        print(f"\n❌ 受け入れテストが失敗しました。エラーコード: {result}")

    return result


def main():
    """メイン処理"""
    parser = argparse.ArgumentParser(description="縮小版の学習を含む受け入れテストを実行します")
    parser.add_argument("--coverage", action="store_true", help="カバレッジレポートを生成")
    parser.add_argument("-k", dest="keyword", default=None, help="実行するテストを絞り込む式")
    args = parser.parse_args()

    sys.exit(run_tests(enable_coverage=args.coverage, keyword=args.keyword))


if __name__ == "__main__":
    main()
