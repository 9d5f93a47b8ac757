# dualview - 双视图Dirichlet过程混合模型
# 同时利用用户特征与发帖行为对用户聚类，并预测帖子长度

__version__ = "1.0.0"
