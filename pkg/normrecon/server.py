from fastapi import FastAPI

from normrecon.recon_mcp import recon_mcp as mcp

# Streamable HTTP transport
http_app = mcp.http_app(path="/mcp/", transport="streamable-http", stateless_http=True)

app = FastAPI(
    title="Normalization Reconstruction Service",
    description="Rebuilds ReLU networks inside frozen random networks by solving normalization parameters",
    version="0.1.0",
    lifespan=http_app.router.lifespan_context,
)
app.mount("/server", http_app, name="mcp-http")


# Root endpoint
@app.get("/")
async def root():
    """Root endpoint showing service information."""
    return {
        "service": "Normalization Reconstruction Service",
        "version": "0.1.0",
        "status": "running",
        "mcp_endpoint": "/server/mcp/",
    }


# Health check endpoint
@app.get("/health/")
async def health_check():
    """Health check endpoint."""
    return {"status": "healthy"}
