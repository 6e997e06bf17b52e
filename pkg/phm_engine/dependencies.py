from typing import Optional

from phm_engine.config import Settings
from phm_engine.service_results import get_settings
from phm_engine.services import EngineService


def initiate_engine_service(app_settings: Optional[Settings] = None) -> EngineService:
    return EngineService(app_settings=app_settings or get_settings())
