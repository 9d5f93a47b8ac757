# 服务层：链文件持久化、场景数据生成与实验调度
