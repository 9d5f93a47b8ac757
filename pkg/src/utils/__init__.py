# 工具：日志与进度显示
