"""
Core 模块 - 配置、错误类型与日志初始化
"""

__version__ = "1.0.0"
