import logging
from contextlib import asynccontextmanager

from dotenv import load_dotenv
from fastapi import FastAPI

# Load env before importing config
load_dotenv()

from app.config import settings
from app.api.routes import install_pipeline, router
from app.pipeline.anomaly import read_profile
from app.pipeline.orchestrator import IDPSPipeline, PipelineConfig
from app.pipeline.rules import load_ruleset

logging.basicConfig(
    level=getattr(logging, settings.log_level.upper(), logging.INFO),
    format="%(asctime)s %(levelname)s %(message)s",
    datefmt="%H:%M:%S",
)
logger = logging.getLogger(__name__)


def build_pipeline() -> IDPSPipeline | None:
    if not settings.rules_path or not settings.profile_path:
        logger.warning("[api] IDPS_RULES_PATH / IDPS_PROFILE_PATH not set; ingest disabled")
        return None
    rules = load_ruleset(settings.rules_path)
    profile = read_profile(settings.profile_path)
    config = PipelineConfig.from_settings(settings, window_s=profile.window_s)
    return IDPSPipeline(rules, profile, config)


@asynccontextmanager
async def lifespan(app: FastAPI):
    # Startup
    pipeline = build_pipeline()
    install_pipeline(pipeline)
    if pipeline is not None:
        logger.info(
            f"[api] IDPS ingest running on port {settings.port}: "
            f"{len(pipeline.state.ruleset)} rules, mode={pipeline.config.mode}, tau={pipeline.config.tau}"
        )
    yield
    # Shutdown
    install_pipeline(None)


app = FastAPI(title="IDPS", version="0.1.0", lifespan=lifespan)
app.include_router(router)


@app.get("/health")
async def health():
    return {"status": "ok"}
