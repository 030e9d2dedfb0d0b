from .federation import FedConfig, RoundResult, ClientUpdate, FederatedServer, LocalWorker, aggregate, global_test
from .runner import run_rounds, run_fednas, run_fedavg_eval
from .history import HistoryWriter, read_history, save_checkpoint, load_checkpoint
