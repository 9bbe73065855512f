"""
世界模型的 JSON 存取
文档格式: {type, dims{state_dim, action_dim}, config, parameters(行主序扁平数组), metadata{seed, training_loss}}
Python 的 float repr 是最短可往返表示，因此 parameters 读写逐位一致
"""
import json
import logging
import os
from datetime import datetime

import numpy as np

from config import TOOLKIT_VERSION
from models.linear import LinearModel
from models.mlp import MlpModel
from models.wall_world import WallWorld
from numerics import ArgumentError

models_logger = logging.getLogger('models')

MODEL_TYPES = {
    LinearModel.kind: LinearModel,
    WallWorld.kind: WallWorld,
    MlpModel.kind: MlpModel,
}


def model_to_document(model, seed=None, training_loss=None):
    description = model.describe()
    parameters = np.asarray(description['parameters'], dtype=np.float64)
    return {
        'type': model.kind,
        'dims': {'state_dim': model.state_dim, 'action_dim': model.action_dim},
        'config': description['config'],
        'parameters': [float(x) for x in parameters],
        'metadata': {
            'seed': seed,
            'training_loss': training_loss,
            'toolkit_version': TOOLKIT_VERSION,
        },
    }


def model_from_document(document):
    model_type = document.get('type')
    if model_type not in MODEL_TYPES:
        raise ArgumentError(f"未知的模型类型: {model_type}，可选 {sorted(MODEL_TYPES)}")
    config = dict(document.get('config') or {})
    parameters = np.array(document.get('parameters', []), dtype=np.float64)
    model = MODEL_TYPES[model_type].from_description(config, parameters)
    dims = document.get('dims') or {}
    if dims and (dims.get('state_dim') != model.state_dim or dims.get('action_dim') != model.action_dim):
        raise ArgumentError(f"模型文档维度与参数不一致: {dims}")
    return model


def save_model(model, path, seed=None, training_loss=None):
    """写出模型 JSON，返回写入的文档"""
    document = model_to_document(model, seed=seed, training_loss=training_loss)
    document['metadata']['saved_at'] = datetime.now().strftime('%Y-%m-%d %H:%M:%S')
    folder = os.path.dirname(path)
    if folder and not os.path.exists(folder):
        os.makedirs(folder)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(document, f, ensure_ascii=False, indent=2)
    models_logger.info(f"模型已保存: {path} ({model.kind}, {len(document['parameters'])} 个参数)")
    return document


def load_model(path):
    """读取模型 JSON，返回 (model, metadata)"""
    if not os.path.exists(path):
        raise FileNotFoundError(f"模型文件不存在: {path}")
    with open(path, 'r', encoding='utf-8') as f:
        document = json.load(f)
    model = model_from_document(document)
    models_logger.info(f"模型已加载: {path} ({model.kind})")
    return model, document.get('metadata', {})
