"""
API v1 router.
"""

from fastapi import APIRouter

from hcft.api.v1.endpoints import health, runs

api_router = APIRouter()

api_router.include_router(runs.router, prefix="/runs", tags=["Runs"])
api_router.include_router(health.router, tags=["Health"])
