# 采样核心：分布、ARS、两个视图的条件分布、簇分配、Gibbs循环与链的后处理
