"""
fracross - 分数阶交叉扩散系统数值实验工具

命令行入口文件
"""

import argparse
import sys
from typing import List, Optional

from loguru import logger
from pydantic import ValidationError as PydanticValidationError

from core import __version__
from core.config import settings
from core.errors import FracrossError, ParseError
from core.logging import setup_logging
from models.run_config import SweepParameter
from services.check_suite import CheckSuite
from services.config_parser import parse_config
from services.run_service import run_service

EXIT_OK = 0
EXIT_CHECK_FAILED = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fracross",
        description="n 物种分数阶交叉扩散系统：模拟、粒子系统、检查与参数扫描",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="输出 DEBUG 级日志")
    parser.add_argument("--log-file", default=None, help="日志文件路径（空字符串关闭文件日志）")

    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, config_required: bool = True) -> None:
        p.add_argument("--config", required=config_required, help="分节配置文件路径")
        p.add_argument("--out", default=None, help="输出目录（缺省取配置 [output] directory）")
        p.add_argument("--seed", type=int, default=None, help="64 位无符号随机种子")
        p.add_argument("overrides", nargs="*", help="section.key=value 形式的覆盖")

    common(sub.add_parser("simulate", help="运行 PDE 求解器"))

    particles = sub.add_parser("particles", help="运行粒子系统")
    common(particles)
    particles.add_argument("--compare", default=None, help="PDE 运行目录，按时刻比较 L¹ 距离")

    check = sub.add_parser("check", help="运行不变量检查套件")
    common(check, config_required=False)

    sweep = sub.add_parser("sweep", help="沿参数阶梯重复模拟")
    common(sweep)
    sweep.add_argument("--param", required=True, choices=[p.value for p in SweepParameter], help="扫描参数")
    sweep.add_argument("--ladder", default=None, help="逗号分隔的参数值（缺省为从配置值起的 4 级减半阶梯）")
    sweep.add_argument("--jobs", type=int, default=settings.MAX_JOBS, help="并发运行数上限")
    return parser


def _load_config(path: Optional[str], overrides: List[str]):
    if path is None:
        return None
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise ParseError(f"无法读取配置文件 {path}: {e}")
    return parse_config(text, overrides)


def run(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging("DEBUG" if args.verbose else None, args.log_file)
    logger.info(f"fracross {__version__}: {args.command}")

    try:
        config = _load_config(args.config, args.overrides)

        if args.command == "simulate":
            return run_service.cmd_simulate(config, args.out)

        if args.command == "particles":
            return run_service.cmd_particles(config, args.out, args.seed, args.compare)

        if args.command == "sweep":
            ladder = None
            if args.ladder:
                try:
                    ladder = [float(v) for v in args.ladder.split(",") if v.strip()]
                except ValueError:
                    raise ParseError(f"无法解析阶梯 '{args.ladder}'")
            return run_service.cmd_sweep(config, SweepParameter(args.param), ladder, args.out, args.jobs)

        if args.command == "check":
            suite = CheckSuite(args.seed)
            results = suite.run(config)
            print(suite.table(results).to_string(index=False))
            return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK_FAILED

    except FracrossError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code
    except PydanticValidationError as e:
        logger.error(f"参数校验失败: {e}")
        return 1

    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
