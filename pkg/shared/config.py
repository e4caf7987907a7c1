import logging
import os

from dotenv import load_dotenv
from temporalio.client import Client
from temporalio.service import TLSConfig

load_dotenv(override=True)

logger = logging.getLogger(__name__)

# Temporal connection settings
TEMPORAL_ADDRESS = os.getenv("TEMPORAL_ADDRESS", "localhost:7233")
TEMPORAL_NAMESPACE = os.getenv("TEMPORAL_NAMESPACE", "default")
TEMPORAL_TASK_QUEUE = os.getenv("TEMPORAL_TASK_QUEUE", "splitting-task-queue")

# Authentication settings
TEMPORAL_TLS_CERT = os.getenv("TEMPORAL_TLS_CERT", "")
TEMPORAL_TLS_KEY = os.getenv("TEMPORAL_TLS_KEY", "")
TEMPORAL_API_KEY = os.getenv("TEMPORAL_API_KEY", "")

# Simulation settings
SPLITTING_MAX_THREADS = int(os.getenv("SPLITTING_MAX_THREADS", "0"))  # 0 -> cpu count
SPLITTING_PATHS_PER_CHUNK = int(os.getenv("SPLITTING_PATHS_PER_CHUNK", "256"))
SPLITTING_OUTPUT_DIR = os.getenv("SPLITTING_OUTPUT_DIR", "./results")
SPLITTING_LOG_LEVEL = os.getenv("SPLITTING_LOG_LEVEL", "WARNING")
SPLITTING_SCHEMA_PATH = os.getenv(
    "SPLITTING_SCHEMA_PATH",
    os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "data", "experiment_schema.json"),
)


def resolve_thread_count(requested: int | None = None) -> int:
    """
    Number of worker threads to use.
    An explicit request wins, but is still capped by SPLITTING_MAX_THREADS when that is set.
    """
    available = os.cpu_count() or 1
    threads = requested if requested and requested > 0 else available
    if SPLITTING_MAX_THREADS > 0:
        threads = min(threads, SPLITTING_MAX_THREADS)
    return max(1, threads)


def _tls_config() -> TLSConfig | bool:
    """mTLS settings from TEMPORAL_TLS_CERT/KEY, True for API-key auth, False for a local server."""
    if TEMPORAL_TLS_CERT and TEMPORAL_TLS_KEY:
        logger.info(f"Using mTLS with cert [{TEMPORAL_TLS_CERT}] and key [{TEMPORAL_TLS_KEY}]")
        with open(TEMPORAL_TLS_CERT, "rb") as cert, open(TEMPORAL_TLS_KEY, "rb") as key:
            return TLSConfig(client_cert=cert.read(), client_private_key=key.read())
    # API keys require TLS
    return bool(TEMPORAL_API_KEY)


async def get_temporal_client() -> Client:
    """
    Connects to Temporal for the worker and for `splitting run --temporal`.
    Local server, mTLS and API-key setups are chosen from the environment.
    """
    logger.info(f"Client connection: [{TEMPORAL_ADDRESS}], Namespace: [{TEMPORAL_NAMESPACE}], Task Queue: [{TEMPORAL_TASK_QUEUE}]")
    options: dict = {"namespace": TEMPORAL_NAMESPACE, "tls": _tls_config()}
    if TEMPORAL_API_KEY:
        logger.info("Using API key authentication")
        options["api_key"] = TEMPORAL_API_KEY
    return await Client.connect(TEMPORAL_ADDRESS, **options)
