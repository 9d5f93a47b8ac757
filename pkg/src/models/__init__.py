# 数据模型：配置、异常、数据集、模型状态与链记录
