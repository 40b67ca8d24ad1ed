import logging
import time
import traceback
from typing import Any, Dict

from cachetools import TTLCache
from fastapi import FastAPI, HTTPException, Request
from fastapi.concurrency import run_in_threadpool
from fastapi.middleware.cors import CORSMiddleware
from pydantic import ValidationError

import reports
from cli import RunConfig, build_map, require_point, run_certify
from errors import WazError
from fixtures import fixture_catalog
from flow_engine import integrate_flow, invert_at, omega_probe
from map_core import MapSpec

logging.basicConfig(
    level=logging.INFO,
    format='%(levelname)s:%(name)s:%(message)s',
    handlers=[logging.StreamHandler()]
)
logger = logging.getLogger(__name__)

API_VERSION = "1.0"

app = FastAPI(title="Global Inversion API", version=API_VERSION)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

# ============================================================================
# CACHE DES CARTES
# ============================================================================

class MapCache:
    """Cartes compilées, indexées par leur source (fixture ou expression), avec TTL"""

    def __init__(self, max_size: int = 256, ttl_seconds: int = 3600):
        self._store = TTLCache(maxsize=max_size, ttl=ttl_seconds)
        self.hits = 0
        self.misses = 0

    @staticmethod
    def key(config: RunConfig) -> str:
        return config.model_dump_json(include={"map", "expr", "dim", "jacobian", "matrix", "x0"})

    def get(self, config: RunConfig) -> MapSpec:
        key = self.key(config)
        m = self._store.get(key)
        if m is None:
            self.misses += 1
            m = build_map(config)
            self._store[key] = m
        else:
            self.hits += 1
        return m

    def clear(self) -> int:
        size = len(self._store)
        self._store.clear()
        return size

    def get_stats(self) -> Dict[str, Any]:
        return {
            "cached_maps": len(self._store),
            "max_size": self._store.maxsize,
            "ttl_seconds": self._store.ttl,
            "hits": self.hits,
            "misses": self.misses,
        }


map_cache = MapCache()

# ============================================================================
# OUTILS
# ============================================================================

async def _create_error_response(error_type: str, message: str, processing_time: float):
    """Crée une réponse d'erreur standardisée"""
    return {
        "status": "error",
        "error_type": error_type,
        "message": message,
        "processing_time": round(processing_time, 3),
    }


def _success(document, start_time: float) -> Dict[str, Any]:
    return {
        "status": "success",
        "processing_time": round(time.time() - start_time, 3),
        "result": document.model_dump(mode="json"),
    }


async def _run(command: str, request: Request, handler):
    start_time = time.time()
    try:
        body = await request.json()
        config = RunConfig(**{**body, "command": command})
        m = map_cache.get(config)
        document = await run_in_threadpool(handler, config, m)
        return _success(document, start_time)
    except ValidationError as e:
        message = "; ".join(err["msg"] for err in e.errors())
        return await _create_error_response("ConfigError", message, time.time() - start_time)
    except WazError as e:
        logger.info(f"{command} rejected: {e.error_type}: {e}")
        return await _create_error_response(e.error_type, str(e), time.time() - start_time)
    except Exception as e:
        logger.error(f"Error in {command}: {e}")
        logger.error(traceback.format_exc())
        raise HTTPException(status_code=500, detail=f"{command} failed: {str(e)}")


def _invert(config: RunConfig, m: MapSpec):
    target = require_point(config.target, m, "target")
    inversion = invert_at(m, target, config.tracking_options())
    omega = None if inversion.ok else omega_probe(inversion.lift, config.window, m.domain)
    return reports.invert_document(m.label, m.x0, target, inversion, omega)


def _trace(config: RunConfig, m: MapSpec):
    start = require_point(config.start, m, "start")
    trajectory = integrate_flow(m, start, config.t_end or float("inf"), config.tracking_options())
    return reports.trace_document(m.label, trajectory, config.t_end, omega_probe(trajectory, config.window, m.domain))


def _certify(config: RunConfig, m: MapSpec):
    return reports.cert_document(run_certify(config, m))

# ============================================================================
# ENDPOINTS API
# ============================================================================

@app.get("/")
async def root():
    """Endpoint racine avec informations sur l'API"""
    return {
        "message": "Global inversion of local diffeomorphisms",
        "version": API_VERSION,
        "status": "active",
        "endpoints": {
            "POST /invert": "Solve f(x) = y by lifting the segment [f(x0), y]",
            "POST /trace": "Follow the auxiliary flow from a start point",
            "POST /certify": "Sampled certificates (star criterion, growth, coercivity)",
            "GET /fixtures": "Built-in maps",
            "GET /health": "Health check",
            "POST /clear_cache": "Drop compiled maps",
            "GET /cache_status": "Map cache statistics",
        },
    }


@app.get("/health")
async def health_check():
    """Vérification de santé de l'API"""
    try:
        return {
            "status": "healthy",
            "checks": {"api_status": "healthy", "fixtures": len(fixture_catalog())},
            "cache_stats": map_cache.get_stats(),
            "version": API_VERSION,
        }
    except Exception as e:
        logger.error(f"Health check failed: {e}")
        raise HTTPException(status_code=500, detail=f"Health check failed: {str(e)}")


@app.get("/fixtures")
async def list_fixtures():
    doc = reports.FixtureListDocument(fixtures=[reports.FixtureModel(**f.to_dict()) for f in fixture_catalog()])
    return doc.model_dump(mode="json")


@app.post("/invert")
async def invert(request: Request):
    return await _run("invert", request, _invert)


@app.post("/trace")
async def trace(request: Request):
    return await _run("trace", request, _trace)


@app.post("/certify")
async def certify_map(request: Request):
    return await _run("certify", request, _certify)


@app.post("/clear_cache")
async def clear_cache():
    """Vide le cache des cartes compilées"""
    try:
        removed = map_cache.clear()
        return {"status": "success", "message": f"Removed {removed} cached maps"}
    except Exception as e:
        logger.error(f"Error clearing cache: {e}")
        raise HTTPException(status_code=500, detail=f"Failed to clear cache: {str(e)}")


@app.get("/cache_status")
async def cache_status():
    """Retourne les statistiques du cache de cartes"""
    try:
        return {"status": "success", "cache_stats": map_cache.get_stats()}
    except Exception as e:
        logger.error(f"Error getting cache status: {e}")
        raise HTTPException(status_code=500, detail=f"Failed to get cache status: {str(e)}")

# ============================================================================
# POINT D'ENTRÉE PRINCIPAL
# ============================================================================

if __name__ == "__main__":
    import uvicorn
    uvicorn.run(app, host="0.0.0.0", port=8000)
