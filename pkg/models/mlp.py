"""
小型 MLP 世界模型与训练

s' = s + W_L·tanh(…tanh(W_1·[s; a] + b_1)…) + b_L
梯度为逐层手写反向累积（tanh 导数 1 − y²）
"""
import logging

import numpy as np

from config import TrainingConfig
from models.base import WorldModel
from numerics import ArgumentError, TrainingError, rowwise_matvec

models_logger = logging.getLogger('models')


class MlpModel(WorldModel):
    kind = 'mlp'

    def __init__(self, state_dim, action_dim, weights, biases, residual=True):
        super().__init__(state_dim, action_dim)
        if len(weights) != len(biases) or not weights:
            raise ArgumentError("weights 与 biases 层数必须一致且至少一层")
        self.weights = [np.ascontiguousarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        fan_in = state_dim + action_dim
        for w, b in zip(self.weights, self.biases):
            if w.shape[1] != fan_in or b.shape != (w.shape[0],):
                raise ArgumentError(f"层形状不一致: W {w.shape}, b {b.shape}, 输入宽度 {fan_in}")
            fan_in = w.shape[0]
        if fan_in != state_dim:
            raise ArgumentError(f"输出宽度 {fan_in} 必须等于状态维度 {state_dim}")
        self.residual = bool(residual)
        self._weights_T = [np.ascontiguousarray(w.T) for w in self.weights]

    @property
    def widths(self):
        """隐藏层宽度"""
        return [w.shape[0] for w in self.weights[:-1]]

    @property
    def parameter_count(self):
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def _activations(self, states, actions):
        h = np.concatenate([states, actions], axis=1)
        hidden = []
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.tanh(rowwise_matvec(w, h) + b)
            hidden.append(h)
        out = rowwise_matvec(self.weights[-1], h) + self.biases[-1]
        return hidden, out

    def forward_rows(self, states, actions):
        _, out = self._activations(states, actions)
        return states + out if self.residual else out

    def _input_cotangent(self, states, actions, cotangents):
        hidden, _ = self._activations(states, actions)
        grad = rowwise_matvec(self._weights_T[-1], cotangents)
        for layer in range(len(hidden) - 1, -1, -1):
            grad = grad * (1.0 - hidden[layer] ** 2)
            grad = rowwise_matvec(self._weights_T[layer], grad)
        return grad

    def vjp_state_rows(self, states, actions, cotangents):
        grad = self._input_cotangent(states, actions, cotangents)[:, :self.state_dim]
        return grad + cotangents if self.residual else grad

    def vjp_action_rows(self, states, actions, cotangents):
        return self._input_cotangent(states, actions, cotangents)[:, self.state_dim:]

    def linearize_rows(self, states, actions):
        """前向累积整块输入雅可比 ∂out/∂[s; a]，逐层右乘 W_l"""
        hidden, out = self._activations(states, actions)
        count, n = states.shape[0], self.state_dim
        jac = np.broadcast_to(self.weights[-1], (count,) + self.weights[-1].shape)
        for layer in range(len(hidden) - 1, -1, -1):
            jac = (jac * (1.0 - hidden[layer] ** 2)[:, None, :]) @ self.weights[layer]
        jac_s, jac_a = jac[:, :, :n].copy(), jac[:, :, n:].copy()
        if self.residual:
            jac_s += np.eye(n)
            out = states + out
        return out, jac_s, jac_a

    def describe(self):
        flat = [np.concatenate([w.ravel(), b]) for w, b in zip(self.weights, self.biases)]
        return {
            'config': {
                'state_dim': self.state_dim,
                'action_dim': self.action_dim,
                'widths': self.widths,
                'residual': self.residual,
            },
            'parameters': np.concatenate(flat),
        }

    @classmethod
    def from_description(cls, config, parameters):
        n, k = config['state_dim'], config['action_dim']
        sizes = [n + k] + list(config['widths']) + [n]
        parameters = np.asarray(parameters, dtype=np.float64)
        weights, biases, offset = [], [], 0
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            weights.append(parameters[offset:offset + fan_in * fan_out].reshape(fan_out, fan_in))
            offset += fan_in * fan_out
            biases.append(parameters[offset:offset + fan_out].copy())
            offset += fan_out
        if offset != parameters.size:
            raise ArgumentError(f"参数长度不匹配: 期望 {offset}，实际 {parameters.size}")
        return cls(n, k, weights, biases, residual=config.get('residual', True))


def collect_transitions(world, samples, rng, box=(-1.0, 1.0), action_scale=1.0):
    """从参考世界采样 (s, a, s') 三元组：状态在盒子内均匀，动作高斯"""
    states = rng.uniform(box[0], box[1], size=(samples, world.state_dim))
    actions = action_scale * rng.standard_normal((samples, world.action_dim))
    next_states = world.batch_forward(states, actions)
    return states, actions, next_states


def _split(total, holdout, rng):
    order = rng.permutation(total)
    n_hold = int(round(holdout * total))
    if n_hold == 0 or n_hold == total:
        return order, order
    return order[n_hold:], order[:n_hold]


def _mse(model, states, actions, targets):
    pred = model.forward_rows(states, actions)
    return float(np.mean((pred - targets) ** 2))


def train_mlp(data, widths=TrainingConfig.HIDDEN_WIDTHS, epochs=TrainingConfig.EPOCHS,
              lr=TrainingConfig.LEARNING_RATE, rng=None, threshold=TrainingConfig.MSE_THRESHOLD,
              batch_size=TrainingConfig.BATCH_SIZE, holdout=TrainingConfig.HOLDOUT_FRACTION):
    """
    训练残差 MLP 世界模型

    Adam 小批量训练全部参数，结束后对输出层做一次最小二乘重拟合；
    留出集（默认 10%）均方误差超过 threshold 时抛出 TrainingError
    """
    if rng is None:
        raise ArgumentError("train_mlp 需要显式的 RngStream")
    states, actions, targets = (np.asarray(x, dtype=np.float64) for x in data)
    total = states.shape[0]
    if total < 1:
        raise ArgumentError("训练数据至少需要 1 条")
    n, k = states.shape[1], actions.shape[1]
    train_idx, hold_idx = _split(total, holdout, rng)

    sizes = [n + k] + list(widths) + [n]
    weights = [rng.standard_normal((fan_out, fan_in)) / np.sqrt(fan_in)
               for fan_in, fan_out in zip(sizes[:-1], sizes[1:])]
    weights[-1] *= 0.1
    biases = [np.zeros(fan_out) for fan_out in sizes[1:]]

    params = weights + biases
    first_moment = [np.zeros_like(p) for p in params]
    second_moment = [np.zeros_like(p) for p in params]
    beta1, beta2, adam_eps = 0.9, 0.999, 1e-8
    step = 0

    x_all = np.concatenate([states, actions], axis=1)
    residual_all = targets - states
    n_layers = len(weights)

    if widths:
        for epoch in range(epochs):
            order = train_idx[rng.permutation(train_idx.size)]
            for start in range(0, order.size, batch_size):
                batch = order[start:start + batch_size]
                hs = [x_all[batch]]
                for layer in range(n_layers - 1):
                    hs.append(np.tanh(hs[-1] @ weights[layer].T + biases[layer]))
                pred = hs[-1] @ weights[-1].T + biases[-1]
                grad_out = 2.0 * (pred - residual_all[batch]) / (batch.size * n)

                grads_w = [None] * n_layers
                grads_b = [None] * n_layers
                grad = grad_out
                for layer in range(n_layers - 1, -1, -1):
                    grads_w[layer] = grad.T @ hs[layer]
                    grads_b[layer] = grad.sum(axis=0)
                    if layer > 0:
                        grad = (grad @ weights[layer]) * (1.0 - hs[layer] ** 2)

                step += 1
                for idx, g in enumerate(grads_w + grads_b):
                    first_moment[idx] = beta1 * first_moment[idx] + (1 - beta1) * g
                    second_moment[idx] = beta2 * second_moment[idx] + (1 - beta2) * g ** 2
                    m_hat = first_moment[idx] / (1 - beta1 ** step)
                    v_hat = second_moment[idx] / (1 - beta2 ** step)
                    params[idx] -= lr * m_hat / (np.sqrt(v_hat) + adam_eps)

            if (epoch + 1) % 100 == 0:
                models_logger.info(f"MLP 训练 epoch {epoch + 1}/{epochs}")

    # 输出层最小二乘重拟合（无隐藏层时即为线性最小二乘的精确解）
    h = x_all[train_idx]
    for layer in range(n_layers - 1):
        h = np.tanh(h @ weights[layer].T + biases[layer])
    design = np.concatenate([h, np.ones((h.shape[0], 1))], axis=1)
    solution, *_ = np.linalg.lstsq(design, residual_all[train_idx], rcond=None)
    weights[-1] = np.ascontiguousarray(solution[:-1].T)
    biases[-1] = solution[-1].copy()

    model = MlpModel(n, k, weights, biases, residual=True)
    train_mse = _mse(model, states[train_idx], actions[train_idx], targets[train_idx])
    holdout_mse = _mse(model, states[hold_idx], actions[hold_idx], targets[hold_idx])
    model.training_loss = holdout_mse
    models_logger.info(
        f"MLP 训练完成: 宽度 {list(widths)}, 参数 {model.parameter_count}, "
        f"训练 MSE {train_mse:.3e}, 留出 MSE {holdout_mse:.3e}"
    )
    if not np.isfinite(holdout_mse) or holdout_mse > threshold:
        raise TrainingError(
            f"留出集 MSE {holdout_mse:.3e} 超过阈值 {threshold:.3e}", final_loss=holdout_mse
        )
    return model
