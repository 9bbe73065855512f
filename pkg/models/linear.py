"""线性世界模型 s' = A s + B a + c"""
import numpy as np

from models.base import WorldModel
from numerics import ArgumentError, as_matrix, as_vector, rowwise_matvec


class LinearModel(WorldModel):
    kind = 'linear'

    def __init__(self, A, B, c=None):
        A = as_matrix(A, 'A')
        B = as_matrix(B, 'B')
        if A.shape[0] != A.shape[1]:
            raise ArgumentError(f"A 必须是方阵，实际形状 {A.shape}")
        if B.shape[0] != A.shape[0]:
            raise ArgumentError(f"B 行数必须等于状态维度 {A.shape[0]}，实际 {B.shape[0]}")
        super().__init__(A.shape[0], B.shape[1])
        self.A = A
        self.B = B
        self.c = np.zeros(self.state_dim) if c is None else as_vector(c, self.state_dim, 'c')
        self._A_T = np.ascontiguousarray(A.T)
        self._B_T = np.ascontiguousarray(B.T)

    def forward_rows(self, states, actions):
        return rowwise_matvec(self.A, states) + rowwise_matvec(self.B, actions) + self.c

    def vjp_state_rows(self, states, actions, cotangents):
        return rowwise_matvec(self._A_T, cotangents)

    def vjp_action_rows(self, states, actions, cotangents):
        return rowwise_matvec(self._B_T, cotangents)

    def linearize_rows(self, states, actions):
        count = states.shape[0]
        return (self.forward_rows(states, actions),
                np.broadcast_to(self.A, (count,) + self.A.shape).copy(),
                np.broadcast_to(self.B, (count,) + self.B.shape).copy())

    def describe(self):
        return {
            'config': {'state_dim': self.state_dim, 'action_dim': self.action_dim},
            'parameters': np.concatenate([self.A.ravel(), self.B.ravel(), self.c]),
        }

    @classmethod
    def from_description(cls, config, parameters):
        n, k = config['state_dim'], config['action_dim']
        parameters = np.asarray(parameters, dtype=np.float64)
        A = parameters[:n * n].reshape(n, n)
        B = parameters[n * n:n * n + n * k].reshape(n, k)
        c = parameters[n * n + n * k:]
        return cls(A, B, c)
