# 命令行接口：generate / fit / predict / summarize / diagnose / experiment
