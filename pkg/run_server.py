from ivserver import IvToolServer

if __name__ == "__main__":
    server = IvToolServer()
    server.run()
