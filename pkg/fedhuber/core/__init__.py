from . import errors, huber, projection, local_iht, central, federated, simgen, metrics, tuning, experiment, utils, background_tasks
