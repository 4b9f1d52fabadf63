import json
import logging
from typing import Optional

from fastmcp import FastMCP

from normrecon.constants import DEFAULT_SAMPLES, LINEARIZATION_MARGIN
from normrecon.errors import ReconstructionError
from normrecon.helpers import configure_logging
from normrecon.models.network import TargetNetwork
from normrecon.models.payload import ConstructionResult
from normrecon.services import deep, netmodel, sparse, verify, wide
from normrecon.services.serialization import dumps_network, loads_network, network_payload

logger = logging.getLogger(__name__)


recon_mcp = FastMCP(
    name="Normalization Reconstruction MCP",
    instructions="""
        Model Context Protocol (MCP) for rebuilding ReLU networks inside frozen random
        networks by solving only their normalization (scale and shift) parameters.

        CAPABILITIES:
        1. Sample a random target network
        2. Reconstruct it with wide layer pairs, low-rank pairs, skip-connected blocks, or sparse frozen weights
        3. Verify functional equivalence of a reconstruction on a ball of inputs
        4. Estimate how often sparse Khatri-Rao systems are singular

        WORKFLOW GUIDELINES:
        - Networks are passed around as JSON documents with a "kind" field
          (target, wide or skip); feed the "network" of a construction result
          back into verify_equivalence together with its target.
        - Reports list per-layer residuals, condition estimates and ranks; a
          construction is exact when every layer is full rank.
    """,
)


def _load_target(target_json: str) -> TargetNetwork:
    target = loads_network(target_json)
    if not isinstance(target, TargetNetwork):
        raise ValueError("Expected a target network document")
    return target


@recon_mcp.tool()
async def sample_target(d: int, depth: int, seed: Optional[int] = None, rank: Optional[int] = None) -> str:
    """Sample a random width-d ReLU target network with `depth` layers and operator norms at most one.

    Args:
        d: Width of every layer
        depth: Number of layers
        seed: Optional integer seed for reproducible sampling
        rank: When given, every layer has rank at most `rank`
    """
    try:
        if rank is not None:
            return dumps_network(netmodel.sample_lowrank_target(d, depth, rank, seed), seed)
        return dumps_network(netmodel.sample_target(d, depth, seed), seed)
    except (ReconstructionError, ValueError) as e:
        return f"Error: {str(e)}"


@recon_mcp.tool()
async def construct_wide(
    target_json: str,
    seed: Optional[int] = None,
    input_radius: float = 1.0,
    margin: float = LINEARIZATION_MARGIN,
    verify_samples: int = 0,
) -> str:
    """Reconstruct a target network with a frozen random network of twice its depth and width out*in per pair.

    Args:
        target_json: Target network document (kind "target")
        seed: Optional integer seed for the frozen weights
        input_radius: Radius of the input ball on which the reconstruction must be exact
        margin: Minimum pre-activation kept by the linearizing shifts
        verify_samples: When positive, check equivalence on this many sampled inputs
    """
    try:
        target = _load_target(target_json)
        stack, report = wide.construct_wide(
            target, seed, input_radius, margin, verify_samples=verify_samples
        )
        return ConstructionResult(network=network_payload(stack, seed), report=report).model_dump_json(indent=2)
    except (ReconstructionError, ValueError) as e:
        return f"Error: {str(e)}"
    except Exception as e:
        logger.error(f"Error in construct_wide: {e}")
        return f"Error constructing wide network: {str(e)}"


@recon_mcp.tool()
async def construct_deep(
    target_json: str,
    chunk: int,
    seed: Optional[int] = None,
    input_radius: float = 1.0,
    verify_samples: int = 0,
) -> str:
    """Reconstruct a target network with skip-connected blocks of width out*chunk, ceil(in/chunk) blocks per layer.

    Args:
        target_json: Target network document (kind "target")
        chunk: Input chunk size k; smaller chunks give narrower but deeper networks
        seed: Optional integer seed for the frozen weights
        input_radius: Radius of the input ball on which the reconstruction must be exact
        verify_samples: When positive, check equivalence on this many sampled inputs
    """
    try:
        target = _load_target(target_json)
        stack, report = deep.construct_deep(
            target, chunk, seed, input_radius, verify_samples=verify_samples
        )
        return ConstructionResult(network=network_payload(stack, seed), report=report).model_dump_json(indent=2)
    except (ReconstructionError, ValueError) as e:
        return f"Error: {str(e)}"
    except Exception as e:
        logger.error(f"Error in construct_deep: {e}")
        return f"Error constructing deep network: {str(e)}"


@recon_mcp.tool()
async def construct_lowrank(
    target_json: str,
    rank: int,
    seed: Optional[int] = None,
    input_radius: float = 1.0,
    verify_samples: int = 0,
) -> str:
    """Reconstruct a target whose layers have rank at most `rank` with pairs of width rank*in and out*rank.

    Args:
        target_json: Target network document (kind "target")
        rank: Upper bound r on the rank of every target layer
        seed: Optional integer seed for the frozen weights
        input_radius: Radius of the input ball on which the reconstruction must be exact
        verify_samples: When positive, check equivalence on this many sampled inputs
    """
    try:
        target = _load_target(target_json)
        stack, report = wide.construct_lowrank(target, rank, seed, input_radius, verify_samples=verify_samples)
        return ConstructionResult(network=network_payload(stack, seed), report=report).model_dump_json(indent=2)
    except (ReconstructionError, ValueError) as e:
        return f"Error: {str(e)}"
    except Exception as e:
        logger.error(f"Error in construct_lowrank: {e}")
        return f"Error constructing low-rank network: {str(e)}"


@recon_mcp.tool()
async def construct_sparse(
    target_json: str,
    sparsity: float,
    seed: Optional[int] = None,
    input_radius: float = 1.0,
    verify_samples: int = 0,
) -> str:
    """Reconstruct a target network like construct_wide, keeping each frozen weight with probability `sparsity`.

    Args:
        target_json: Target network document (kind "target")
        sparsity: Keep probability p in (0, 1] of the Bernoulli masks
        seed: Optional integer seed for the frozen weights and masks
        input_radius: Radius of the input ball on which the reconstruction must be exact
        verify_samples: When positive, check equivalence on this many sampled inputs
    """
    try:
        target = _load_target(target_json)
        stack, report = sparse.construct_sparse(
            target, sparsity, seed, input_radius, verify_samples=verify_samples
        )
        return ConstructionResult(network=network_payload(stack, seed), report=report).model_dump_json(indent=2)
    except ReconstructionError as e:
        report = getattr(e, "report", None)
        if report is not None:
            return f"Error: {str(e)}\n{report.model_dump_json(indent=2)}"
        return f"Error: {str(e)}"
    except ValueError as e:
        return f"Error: {str(e)}"
    except Exception as e:
        logger.error(f"Error in construct_sparse: {e}")
        return f"Error constructing sparse network: {str(e)}"


@recon_mcp.tool()
async def verify_equivalence(
    network_json: str,
    target_json: str,
    samples: int = DEFAULT_SAMPLES,
    seed: Optional[int] = None,
    radius: float = 1.0,
) -> str:
    """Compare a network with a target on inputs drawn uniformly from a ball; returns max and mean errors.

    Args:
        network_json: Network document of any kind
        target_json: Target network document (kind "target")
        samples: Number of sampled inputs
        seed: Optional integer seed for the input samples
        radius: Radius of the input ball
    """
    try:
        result = verify.verify_equivalence(
            loads_network(network_json), _load_target(target_json), samples, seed, radius
        )
        return result.model_dump_json(indent=2)
    except (ReconstructionError, ValueError) as e:
        return f"Error: {str(e)}"


@recon_mcp.tool()
async def singularity_rate(d: int, sparsity: float, trials: int, seed: Optional[int] = None) -> str:
    """Monte-Carlo rate at which the Khatri-Rao product of two sparsified random d x d^2 matrices is singular.

    Args:
        d: Dimension d
        sparsity: Keep probability p in (0, 1]
        trials: Number of random draws
        seed: Optional integer seed
    """
    try:
        estimate = sparse.estimate_singularity_rate(d, sparsity, trials, seed)
        return json.dumps(estimate.as_dict(), indent=2)
    except (ReconstructionError, ValueError) as e:
        return f"Error: {str(e)}"


def main():
    configure_logging()
    recon_mcp.run(transport="stdio")


if __name__ == "__main__":
    main()
